"""PCM clip container, WAV file I/O, and synthetic signal generation.

Samples are kept as normalized float64 in [-1, 1]; 16-bit integer
conversion happens only at the WAV boundary.  The synthesizer stands in
for physical recordings: corpora for training and tests are mixed from
sine / noise / decaying-burst components.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

INT16_SCALE = 32768.0


class WavError(Exception):
    """Base class for WAV container problems."""


class MalformedWavError(WavError):
    """Byte stream is not a well-formed RIFF/WAVE container."""


class UnsupportedEncodingError(WavError):
    """Container is valid but the audio encoding is not integer PCM."""


class UnsupportedBitDepthError(WavError):
    """PCM stream uses a bit depth other than 16."""


class SynthError(ValueError):
    """Synthesis spec is invalid or mixing would clip."""


@dataclass(frozen=True)
class AudioClip:
    """Normalized PCM audio: ``samples`` has shape (channels, n)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[0] not in (1, 2):
            raise ValueError(f"expected 1 or 2 channels, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("samples exceed [-1.0, 1.0]")
        object.__setattr__(self, "samples", samples)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        """Samples per channel."""
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    def mono(self) -> np.ndarray:
        """1-D view of the signal; requires a mono clip."""
        if self.channels != 1:
            raise ValueError("clip is not mono; call downmix_mono first")
        return self.samples[0]


def read_wav(data: bytes) -> AudioClip:
    """Parse a RIFF/WAVE byte stream into an :class:`AudioClip`.

    Only integer PCM at 16 bits, mono or stereo, is accepted.  Samples
    are scaled by 1/32768.  Malformed containers, non-PCM encodings, and
    other bit depths raise distinct exceptions.
    """
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError("missing RIFF/WAVE header")

    fmt = None
    pcm_bytes = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise MalformedWavError("data chunk truncated")
            pcm_bytes = body
        # chunks are word-aligned
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise MalformedWavError("no fmt chunk")
    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedEncodingError(f"audio format {audio_format} is not integer PCM")
    if bits != 16:
        raise UnsupportedBitDepthError(f"{bits}-bit PCM is not supported (16-bit only)")
    if channels not in (1, 2):
        raise MalformedWavError(f"unsupported channel count {channels}")
    if pcm_bytes is None:
        raise MalformedWavError("no data chunk")

    frames = np.frombuffer(pcm_bytes[: len(pcm_bytes) - len(pcm_bytes) % (2 * channels)], dtype="<i2")
    samples = frames.astype(np.float64).reshape(-1, channels).T / INT16_SCALE
    return AudioClip(samples=samples, sample_rate=rate)


def write_wav(clip: AudioClip) -> bytes:
    """Encode a clip as a canonical 44-byte-header PCM-16 WAV byte stream.

    Values are rounded to the nearest 16-bit quantum; +1.0 saturates to
    32767, so ``read_wav(write_wav(c))`` is within 1/32768 per sample.
    """
    ints = np.clip(np.rint(clip.samples * INT16_SCALE), -32768, 32767).astype("<i2")
    pcm = ints.T.reshape(-1).tobytes()  # interleave channels
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(pcm),
        b"WAVE",
        b"fmt ",
        16,
        1,
        clip.channels,
        clip.sample_rate,
        clip.sample_rate * clip.channels * 2,
        clip.channels * 2,
        16,
        b"data",
        len(pcm),
    )
    return header + pcm


def downmix_mono(clip: AudioClip) -> AudioClip:
    """Average stereo channels into one; mono clips pass through unchanged."""
    if clip.channels == 1:
        return clip
    return AudioClip(samples=clip.samples.mean(axis=0), sample_rate=clip.sample_rate)


@dataclass(frozen=True)
class Component:
    """One additive ingredient of a synthetic signal.

    kind ``sine``: ``amplitude * sin(2*pi*freq*t)`` over the window.
    kind ``noise``: seeded uniform noise in ``[-amplitude, amplitude]``.
    kind ``burst``: noise shaped by ``exp(-decay_rate * (t - start_s))``.
    """

    kind: str
    amplitude: float
    freq: float = 0.0
    start_s: float = 0.0
    duration_s: float | None = None  # None = until end of clip
    decay_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sine", "noise", "burst"):
            raise SynthError(f"unknown component kind {self.kind!r}")
        if not 0.0 <= self.amplitude <= 1.0:
            raise SynthError(f"amplitude {self.amplitude} outside [0, 1]")
        if self.kind == "sine" and self.freq <= 0.0:
            raise SynthError("sine component needs a positive freq")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic clip."""

    components: tuple[Component, ...]
    duration_s: float = 1.0
    sample_rate: int = 44100

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.duration_s <= 0:
            raise SynthError("duration_s must be positive")
        for c in self.components:
            end = self.duration_s if c.duration_s is None else c.start_s + c.duration_s
            if c.start_s < 0 or end > self.duration_s + 1e-12:
                raise SynthError(
                    f"component window [{c.start_s}, {end}] outside [0, {self.duration_s}]"
                )

    def to_dict(self) -> dict:
        comps = []
        for c in self.components:
            d = {"kind": c.kind, "amplitude": c.amplitude}
            if c.kind == "sine":
                d["freq"] = c.freq
            if c.kind == "burst":
                d["decay_rate"] = c.decay_rate
            if c.start_s:
                d["start_s"] = c.start_s
            if c.duration_s is not None:
                d["duration_s"] = c.duration_s
            comps.append(d)
        return {
            "duration_s": self.duration_s,
            "sample_rate": self.sample_rate,
            "components": comps,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        comps = tuple(
            Component(
                kind=c["kind"],
                amplitude=c["amplitude"],
                freq=c.get("freq", 0.0),
                start_s=c.get("start_s", 0.0),
                duration_s=c.get("duration_s"),
                decay_rate=c.get("decay_rate", 0.0),
            )
            for c in doc["components"]
        )
        return cls(
            components=comps,
            duration_s=doc.get("duration_s", 1.0),
            sample_rate=doc.get("sample_rate", 44100),
        )

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        return cls.from_dict(json.loads(text))


def synthesize(spec: SynthSpec, seed: int) -> AudioClip:
    """Mix a spec's components into a mono clip, deterministically.

    Noise is drawn from one generator seeded by ``seed`` and consumed in
    component order, so equal ``(spec, seed)`` gives bit-identical output.
    Mixing that would exceed full scale raises rather than clipping.
    """
    n = int(round(spec.duration_s * spec.sample_rate))
    t = np.arange(n, dtype=np.float64) / spec.sample_rate
    out = np.zeros(n, dtype=np.float64)
    rng = np.random.default_rng(seed)
    for c in spec.components:
        i0 = int(round(c.start_s * spec.sample_rate))
        i1 = n if c.duration_s is None else min(n, int(round((c.start_s + c.duration_s) * spec.sample_rate)))
        if i1 <= i0:
            continue
        if c.kind == "sine":
            out[i0:i1] += c.amplitude * np.sin(2.0 * np.pi * c.freq * t[i0:i1])
        elif c.kind == "noise":
            out[i0:i1] += c.amplitude * rng.uniform(-1.0, 1.0, i1 - i0)
        else:  # burst
            env = np.exp(-c.decay_rate * (t[i0:i1] - c.start_s))
            out[i0:i1] += c.amplitude * rng.uniform(-1.0, 1.0, i1 - i0) * env
    if n and np.max(np.abs(out)) > 1.0:
        raise SynthError(f"mixed peak {np.max(np.abs(out)):.4f} exceeds 1.0")
    return AudioClip(samples=out, sample_rate=spec.sample_rate)
