"""Synthetic labeled corpora: the stand-in for recorded hit sounds.

Each class is a family of synth recipes with jittered parameters, so
clips within a class vary while classes stay separable in the
spectrogram.  Hit classes carry a short noise burst with a
class-specific decay plus a resonant tone in a class-specific band;
the assist-tone variants add a continuous 10 kHz carrier.

A corpus spec is a JSON document::

    {
      "sample_rate": 44100,
      "duration_s": 1.0,
      "classes": [
        {"label": "forearm", "count": 200, "components": [
          {"kind": "sine", "freq": [3100, 3500], "amplitude": [0.25, 0.35],
           "start_s": [0.2, 0.6], "duration_s": [0.2, 0.3]},
          ...
        ]},
        ...
      ],
      "background": ["silence", "other"]
    }

Any numeric component field may be a two-element ``[lo, hi]`` list;
a value is drawn uniformly per clip from the clip's own seeded stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from parablude.audio import Component, SynthSpec, synthesize, write_wav

LOCATIONS = ("lab", "outdoor", "judo_hall")
CLOTHING = ("plain", "tshirt", "hoodie")


@dataclass(frozen=True)
class ClassSpec:
    """One class: a component template list with optional jitter ranges."""

    label: str
    count: int
    components: tuple[dict, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(dict(c) for c in self.components))
        if self.count < 1:
            raise ValueError(f"class {self.label!r} needs count >= 1")


@dataclass(frozen=True)
class CorpusSpec:
    classes: tuple[ClassSpec, ...]
    background: tuple[str, ...] = ("silence", "other")
    sample_rate: int = 44100
    duration_s: float = 1.0
    lowpass_hz: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "background", tuple(self.background))
        labels = [c.label for c in self.classes]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate class labels")
        unknown = set(self.background) - set(labels)
        if unknown:
            raise ValueError(f"background classes {sorted(unknown)} not in class list")

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.classes]

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "duration_s": self.duration_s,
            "lowpass_hz": self.lowpass_hz,
            "background": list(self.background),
            "classes": [
                {"label": c.label, "count": c.count, "components": list(c.components)}
                for c in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CorpusSpec":
        return cls(
            classes=tuple(
                ClassSpec(label=c["label"], count=c["count"], components=tuple(c["components"]))
                for c in doc["classes"]
            ),
            background=tuple(doc.get("background", ("silence", "other"))),
            sample_rate=doc.get("sample_rate", 44100),
            duration_s=doc.get("duration_s", 1.0),
            lowpass_hz=doc.get("lowpass_hz"),
        )

    @classmethod
    def from_json(cls, text: str) -> "CorpusSpec":
        return cls.from_dict(json.loads(text))


def _draw(rng: np.random.Generator, value):
    if isinstance(value, (list, tuple)):
        lo, hi = value
        return float(rng.uniform(lo, hi))
    return value


def clip_spec(corpus: CorpusSpec, class_index: int, clip_index: int, seed: int) -> tuple[SynthSpec, int]:
    """Resolve one clip's jittered recipe; returns (spec, synth seed)."""
    rng = np.random.default_rng([seed, class_index, clip_index])
    resolved = []
    for tpl in corpus.classes[class_index].components:
        resolved.append(
            Component(
                kind=tpl["kind"],
                amplitude=_draw(rng, tpl.get("amplitude", 0.0)),
                freq=_draw(rng, tpl.get("freq", 0.0)),
                start_s=_draw(rng, tpl.get("start_s", 0.0)),
                duration_s=None if tpl.get("duration_s") is None else _draw(rng, tpl["duration_s"]),
                decay_rate=_draw(rng, tpl.get("decay_rate", 0.0)),
            )
        )
    spec = SynthSpec(
        components=tuple(resolved),
        duration_s=corpus.duration_s,
        sample_rate=corpus.sample_rate,
    )
    return spec, int(rng.integers(0, 2**63))


def render_clip(corpus: CorpusSpec, class_index: int, clip_index: int, seed: int):
    spec, synth_seed = clip_spec(corpus, class_index, clip_index, seed)
    return synthesize(spec, synth_seed)


def generate_corpus(corpus: CorpusSpec, out_dir: str | Path, seed: int) -> list[dict]:
    """Render every clip to WAV under ``out_dir`` and return manifest rows.

    Rows carry path/label plus recording-condition metadata cycled
    deterministically over location x clothing combinations.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for ci, cls in enumerate(corpus.classes):
        class_dir = out_dir / cls.label
        class_dir.mkdir(exist_ok=True)
        for ki in range(cls.count):
            clip = render_clip(corpus, ci, ki, seed)
            rel = Path(cls.label) / f"{cls.label}_{ki:04d}.wav"
            (out_dir / rel).write_bytes(write_wav(clip))
            entries.append(
                {
                    "path": str(rel),
                    "label": cls.label,
                    "location": LOCATIONS[ki % len(LOCATIONS)],
                    "clothing": CLOTHING[(ki // len(LOCATIONS)) % len(CLOTHING)],
                }
            )
    return entries


def _hit_class(label: str, count: int, tone_band: tuple[float, float], decay: tuple[float, float],
               carrier: bool) -> ClassSpec:
    components = [
        {
            "kind": "burst",
            "amplitude": [0.3, 0.4],
            "start_s": [0.2, 0.55],
            "duration_s": [0.25, 0.35],
            "decay_rate": list(decay),
        },
        {
            "kind": "sine",
            "freq": list(tone_band),
            "amplitude": [0.2, 0.3],
            "start_s": [0.2, 0.55],
            "duration_s": [0.15, 0.25],
        },
    ]
    if carrier:
        components.append({"kind": "sine", "freq": 10000.0, "amplitude": [0.06, 0.1]})
    return ClassSpec(label=label, count=count, components=tuple(components))


def five_class_spec(clips_per_class: int = 200, silence_count: int | None = None) -> CorpusSpec:
    """Assist-tone corpus: hand/forearm/upper_arm hits plus silence/other.

    Hit classes carry the continuous 10 kHz carrier, so the low-pass
    stage must stay off for this family.
    """
    n = clips_per_class
    return CorpusSpec(
        classes=(
            _hit_class("hand", n, (1400.0, 1700.0), (38.0, 50.0), carrier=True),
            _hit_class("forearm", n, (3100.0, 3500.0), (20.0, 28.0), carrier=True),
            _hit_class("upper_arm", n, (5700.0, 6300.0), (10.0, 15.0), carrier=True),
            ClassSpec(
                label="silence",
                count=silence_count if silence_count is not None else n,
                components=({"kind": "noise", "amplitude": [0.001, 0.004]},),
            ),
            ClassSpec(
                label="other",
                count=n,
                components=(
                    {"kind": "noise", "amplitude": [0.05, 0.12]},
                    {"kind": "sine", "freq": [300.0, 900.0], "amplitude": [0.02, 0.06]},
                ),
            ),
        ),
        background=("silence", "other"),
        lowpass_hz=None,
    )


def six_class_spec(clips_per_class: int = 1200, silence_count: int = 540) -> CorpusSpec:
    """Plain-recording corpus layout: the five-class set plus sword-on-sword.

    No carrier tone; the 252 Hz low-pass stage applies.  Default counts
    match the recorded collection (1200 per class, 540 silence).
    """
    n = clips_per_class
    base = five_class_spec(n, silence_count)
    classes = []
    for cls in base.classes:
        stripped = tuple(
            c for c in cls.components if not (c.get("kind") == "sine" and c.get("freq") == 10000.0)
        )
        classes.append(ClassSpec(label=cls.label, count=cls.count, components=stripped))
    classes.insert(3, _hit_class("sword", n, (7600.0, 8400.0), (55.0, 70.0), carrier=False))
    return CorpusSpec(
        classes=tuple(classes),
        background=("silence", "other"),
        lowpass_hz=252.0,
    )


def two_class_spec(clips_per_class: int = 40) -> CorpusSpec:
    """Minimal linearly separable corpus: a low tone vs near-silence."""
    return CorpusSpec(
        classes=(
            ClassSpec(
                label="tone",
                count=clips_per_class,
                components=({"kind": "sine", "freq": 100.0, "amplitude": [0.2, 0.5]},),
            ),
            ClassSpec(
                label="silence",
                count=clips_per_class,
                components=({"kind": "noise", "amplitude": [0.001, 0.003]},),
            ),
        ),
        background=("silence",),
        lowpass_hz=252.0,
    )


PRESETS = {
    "five_class": five_class_spec,
    "six_class": six_class_spec,
    "two_class": two_class_spec,
}
