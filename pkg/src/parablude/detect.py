"""Streaming hit detection over a sliding one-second window.

A detector owns one microphone stream.  Samples are pushed in chunks of
any size; the detector filters them (when the model's front end says
so), keeps exactly one window of history, and runs the classifier every
``stride_hops`` hops.  A hit event fires when the same non-background
class wins with enough posterior for ``persistence`` consecutive
inferences, after which a refractory period mutes further emissions.

Decisions happen at absolute stream positions, never at chunk
boundaries, so any chunking of the same stream yields the identical
event sequence.  Overlapping windows share per-frame FFT work through a
cache keyed by absolute frame start; only the frames a new hop exposes
are computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from parablude import nn
from parablude.audio import AudioClip
from parablude.dsp import _frame_features, design_lowpass, features
from parablude.train import Checkpoint


@dataclass(frozen=True)
class DetectorConfig:
    """Debounce and cadence knobs for streaming detection.

    ``stride_hops=1`` means an inference every hop (20 ms cadence with
    default features).  ``persistence`` consecutive agreeing inferences
    at or above ``threshold`` are required before an event, trading a
    little latency for stability.
    """

    window_s: float = 1.0
    stride_hops: int = 1
    threshold: float = 0.8
    persistence: int = 3
    refractory_ms: float = 500.0

    def __post_init__(self):
        if self.window_s <= 0:
            raise ValueError("window_s must be positive")
        if self.stride_hops < 1:
            raise ValueError("stride_hops must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.persistence < 1:
            raise ValueError("persistence must be >= 1")
        if self.refractory_ms < 0:
            raise ValueError("refractory_ms must be >= 0")


@dataclass(frozen=True)
class HitEvent:
    """One detected contact: where it landed, how sure, and when."""

    pmu_id: str
    location: str
    confidence: float
    timestamp_ms: float

    def to_dict(self) -> dict:
        return {
            "pmu_id": self.pmu_id,
            "location": self.location,
            "confidence": self.confidence,
            "timestamp_ms": self.timestamp_ms,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HitEvent":
        return cls(
            pmu_id=doc["pmu_id"],
            location=doc["location"],
            confidence=float(doc["confidence"]),
            timestamp_ms=float(doc["timestamp_ms"]),
        )


def classify_window(clip: AudioClip, checkpoint: Checkpoint) -> tuple[str, np.ndarray]:
    """Classify one window-sized clip; ties break toward the lowest index."""
    spec = features(clip, checkpoint.features)
    probs = nn.predict_proba(spec.values[np.newaxis], checkpoint.params)[0]
    return checkpoint.label_set.classes[int(np.argmax(probs))], probs


class Detector:
    """Stateful per-stream detector; calls to ``push`` must be serialized."""

    def __init__(
        self,
        checkpoint: Checkpoint,
        config: DetectorConfig | None = None,
        pmu_id: str = "pmu-0",
        sample_rate: int = 44100,
    ):
        self.checkpoint = checkpoint
        self.config = config or DetectorConfig()
        self.pmu_id = pmu_id
        self.sample_rate = sample_rate

        fc = checkpoint.features.resolve(sample_rate)
        self._spec_cfg = fc.spectrogram
        self.window_samples = int(round(self.config.window_s * sample_rate))
        self.hop_samples = self._spec_cfg.hop_samples(sample_rate)
        self._frame_samples = self._spec_cfg.window_samples(sample_rate)
        self._frames_per_window = self._spec_cfg.frame_count(self.window_samples, sample_rate)
        expected = (self._frames_per_window, self._spec_cfg.feature_bins)
        if expected != checkpoint.params.input_shape:
            raise ValueError(
                f"window of {self.window_samples} samples yields features {expected}, "
                f"model expects {checkpoint.params.input_shape}"
            )
        self._stride = self.config.stride_hops * self.hop_samples
        self._refractory_samples = int(round(self.config.refractory_ms * sample_rate / 1000.0))

        if fc.lowpass_hz is not None:
            c = design_lowpass(fc.lowpass_hz, sample_rate)
            self._filter_ba = ([c.b0, c.b1, c.b2], [1.0, c.a1, c.a2])
            self._filter_state = np.zeros(2)
        else:
            self._filter_ba = None
            self._filter_state = None

        self._pos = 0  # absolute samples consumed
        self._buf = np.empty(0)
        self._buf_start = 0  # absolute index of _buf[0]
        self._frame_cache: dict[int, np.ndarray] = {}
        self._next_infer = self.window_samples
        self._streak_class = -1
        self._streak_len = 0
        self._refractory_until = 0
        self.inference_count = 0

    def push(self, chunk: np.ndarray | AudioClip) -> list[HitEvent]:
        """Feed samples; returns any events the new audio completed."""
        if isinstance(chunk, AudioClip):
            if chunk.sample_rate != self.sample_rate:
                raise ValueError(
                    f"chunk at {chunk.sample_rate} Hz, detector stream is {self.sample_rate} Hz"
                )
            x = chunk.mono()
        else:
            x = np.asarray(chunk, dtype=np.float64)
            if x.ndim != 1:
                raise ValueError(f"expected mono 1-D samples, got shape {x.shape}")
        if self._filter_ba is not None and len(x):
            b, a = self._filter_ba
            y, self._filter_state = lfilter(b, a, x, zi=self._filter_state)
            x = np.clip(y, -1.0, 1.0)

        self._buf = np.concatenate([self._buf, x])
        self._pos += len(x)

        events = []
        while self._next_infer <= self._pos:
            event = self._infer_at(self._next_infer)
            if event is not None:
                events.append(event)
            self._next_infer += self._stride
        self._trim()
        return events

    def _infer_at(self, pos: int) -> HitEvent | None:
        start = pos - self.window_samples
        frame_starts = start + self.hop_samples * np.arange(self._frames_per_window)
        missing = [int(s) for s in frame_starts if s not in self._frame_cache]
        if missing:
            rel = np.asarray(missing) - self._buf_start
            idx = rel[:, np.newaxis] + np.arange(self._frame_samples)[np.newaxis, :]
            rows = _frame_features(self._buf[idx], self._spec_cfg)
            for s, row in zip(missing, rows):
                self._frame_cache[s] = row
        linear = np.stack([self._frame_cache[int(s)] for s in frame_starts])
        values = np.log(linear + self._spec_cfg.log_floor)
        probs = nn.predict_proba(values[np.newaxis], self.checkpoint.params)[0]
        self.inference_count += 1

        cls = int(np.argmax(probs))
        name = self.checkpoint.label_set.classes[cls]
        confident_hit = (
            not self.checkpoint.label_set.is_background(name) and probs[cls] >= self.config.threshold
        )
        if pos < self._refractory_until or not confident_hit:
            self._streak_class, self._streak_len = -1, 0
            return None
        if cls == self._streak_class:
            self._streak_len += 1
        else:
            self._streak_class, self._streak_len = cls, 1
        if self._streak_len < self.config.persistence:
            return None
        self._streak_class, self._streak_len = -1, 0
        self._refractory_until = pos + self._refractory_samples
        return HitEvent(
            pmu_id=self.pmu_id,
            location=name,
            confidence=float(probs[cls]),
            timestamp_ms=pos * 1000.0 / self.sample_rate,
        )

    def _trim(self):
        # keep just enough history for the next window
        keep_from = self._next_infer - self.window_samples
        if keep_from > self._buf_start:
            self._buf = self._buf[keep_from - self._buf_start :]
            self._buf_start = keep_from
        for s in [s for s in self._frame_cache if s < keep_from]:
            del self._frame_cache[s]


def detect_stream(
    checkpoint: Checkpoint,
    clip: AudioClip,
    config: DetectorConfig | None = None,
    pmu_id: str = "pmu-0",
) -> list[HitEvent]:
    """Run a whole clip through a fresh detector in one push."""
    detector = Detector(checkpoint, config, pmu_id, sample_rate=clip.sample_rate)
    return detector.push(clip.mono())
