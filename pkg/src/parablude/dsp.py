"""Signal front end: low-pass biquad, framing, and log spectrograms.

The chain mirrors the microphone unit's preprocessing: an optional
second-order Butterworth low-pass (cutoff 252 Hz by default), then
30 ms windows every 20 ms, an FFT per window, and uniform aggregation
of magnitude bins into a fixed number of feature columns.  A 1 s clip
at 44.1 kHz with defaults produces a 49x40 feature map.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from parablude.audio import AudioClip

DEFAULT_LOWPASS_HZ = 252.0


@dataclass(frozen=True)
class BiquadCoeffs:
    """Normalized biquad (a0 = 1): y += b*x - a*y history."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    @property
    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1.0))

    def response_db(self, freq_hz: float, rate_hz: float) -> float:
        """Magnitude response in dB at one frequency."""
        z = np.exp(-2j * np.pi * freq_hz / rate_hz)
        h = (self.b0 + self.b1 * z + self.b2 * z * z) / (1.0 + self.a1 * z + self.a2 * z * z)
        return 20.0 * np.log10(np.abs(h))


def design_lowpass(cutoff_hz: float, rate_hz: float) -> BiquadCoeffs:
    """Second-order Butterworth low-pass via the bilinear transform.

    Frequency prewarping places the -3.01 dB point exactly at
    ``cutoff_hz``.  Uses the audio-EQ cookbook form with Q = 1/sqrt(2).
    """
    if not 0.0 < cutoff_hz < rate_hz / 2.0:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, {rate_hz / 2}) for rate {rate_hz}")
    w0 = 2.0 * np.pi * cutoff_hz / rate_hz
    q = 1.0 / np.sqrt(2.0)
    alpha = np.sin(w0) / (2.0 * q)
    cos_w0 = np.cos(w0)
    a0 = 1.0 + alpha
    coeffs = BiquadCoeffs(
        b0=(1.0 - cos_w0) / 2.0 / a0,
        b1=(1.0 - cos_w0) / a0,
        b2=(1.0 - cos_w0) / 2.0 / a0,
        a1=-2.0 * cos_w0 / a0,
        a2=(1.0 - alpha) / a0,
    )
    assert coeffs.is_stable()
    return coeffs


def filter_apply(coeffs: BiquadCoeffs, clip: AudioClip) -> AudioClip:
    """Run a mono clip through the biquad (transposed direct form II).

    Starts from zero state; output length equals input length.  Transient
    overshoot is saturated to full scale, as a hardware front end would.
    """
    x = clip.mono()
    y = lfilter([coeffs.b0, coeffs.b1, coeffs.b2], [1.0, coeffs.a1, coeffs.a2], x)
    return AudioClip(samples=np.clip(y, -1.0, 1.0), sample_rate=clip.sample_rate)


@dataclass(frozen=True)
class SpectrogramConfig:
    """Framing and feature-aggregation settings.

    ``fft_size=None`` resolves to the smallest power of two that holds
    one window.  ``feature_bins`` is the spectrogram width; 40 keeps the
    flattened conv output at 4000 for 1 s / 44.1 kHz inputs.
    """

    window_ms: float = 30.0
    hop_ms: float = 20.0
    fft_size: int | None = None
    feature_bins: int = 40
    log_floor: float = 1e-6

    def __post_init__(self):
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ValueError("window_ms and hop_ms must be positive")
        if self.feature_bins < 1:
            raise ValueError("feature_bins must be >= 1")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def window_samples(self, rate: int) -> int:
        return int(round(self.window_ms * rate / 1000.0))

    def hop_samples(self, rate: int) -> int:
        return int(round(self.hop_ms * rate / 1000.0))

    def resolved_fft_size(self, rate: int) -> int:
        w = self.window_samples(rate)
        if self.fft_size is None:
            return 1 << (w - 1).bit_length()
        if self.fft_size < w:
            raise ValueError(f"fft_size {self.fft_size} < window of {w} samples")
        return self.fft_size

    def resolve(self, rate: int) -> "SpectrogramConfig":
        """Pin fft_size for a concrete sample rate (for checkpoints)."""
        cfg = replace(self, fft_size=self.resolved_fft_size(rate))
        if cfg.feature_bins > cfg.fft_size // 2:
            raise ValueError(f"feature_bins {cfg.feature_bins} > fft_size/2 = {cfg.fft_size // 2}")
        return cfg

    def frame_count(self, n_samples: int, rate: int) -> int:
        w, h = self.window_samples(rate), self.hop_samples(rate)
        if n_samples < w:
            raise ValueError(f"clip of {n_samples} samples shorter than one {w}-sample window")
        return 1 + (n_samples - w) // h

    def to_dict(self) -> dict:
        return {
            "window_ms": self.window_ms,
            "hop_ms": self.hop_ms,
            "fft_size": self.fft_size,
            "feature_bins": self.feature_bins,
            "log_floor": self.log_floor,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SpectrogramConfig":
        return cls(**doc)


@dataclass(frozen=True)
class Spectrogram:
    """T x F log-magnitude feature map plus the config that shaped it."""

    values: np.ndarray
    config: SpectrogramConfig

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_csv(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, self.values, delimiter=",", fmt="%.10g")
        return buf.getvalue()


def frame_signal(clip: AudioClip, cfg: SpectrogramConfig) -> np.ndarray:
    """Slice a mono clip into (T, W) frames; trailing partial window dropped."""
    x = clip.mono()
    rate = clip.sample_rate
    w, h = cfg.window_samples(rate), cfg.hop_samples(rate)
    t = cfg.frame_count(len(x), rate)
    idx = np.arange(w)[np.newaxis, :] + h * np.arange(t)[:, np.newaxis]
    return x[idx]


def spectrogram(clip: AudioClip, cfg: SpectrogramConfig) -> Spectrogram:
    """Hann-windowed FFT magnitudes, grouped into feature columns, logged.

    Per frame: apply a Hann window, zero-pad to ``fft_size``, take the
    magnitude of the first ``fft_size/2`` bins, average adjacent bins
    into ``feature_bins`` groups, then ``log(x + log_floor)``.
    """
    cfg = cfg.resolve(clip.sample_rate)
    frames = frame_signal(clip, cfg)
    feats = _frame_features(frames, cfg)
    return Spectrogram(values=np.log(feats + cfg.log_floor), config=cfg)


def _frame_features(frames: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """Linear-magnitude feature rows for pre-cut frames (no log yet)."""
    w = frames.shape[-1]
    windowed = frames * np.hanning(w)
    mags = np.abs(np.fft.rfft(windowed, n=cfg.fft_size, axis=-1))[..., : cfg.fft_size // 2]
    edges = group_edges(cfg.fft_size // 2, cfg.feature_bins)
    return np.stack(
        [mags[..., lo:hi].mean(axis=-1) for lo, hi in zip(edges[:-1], edges[1:])], axis=-1
    )


def group_edges(n_bins: int, n_groups: int) -> np.ndarray:
    """Bin-group boundaries: group g covers [edges[g], edges[g+1])."""
    return (np.arange(n_groups + 1) * n_bins) // n_groups


def feature_index_for(freq_hz: float, rate: int, cfg: SpectrogramConfig) -> int:
    """Which feature column a pure tone of ``freq_hz`` lands in."""
    cfg = cfg.resolve(rate)
    fft_bin = int(freq_hz * cfg.fft_size / rate)
    edges = group_edges(cfg.fft_size // 2, cfg.feature_bins)
    return int(np.searchsorted(edges, fft_bin, side="right") - 1)


def band_energy(clip: AudioClip, center_hz: float, bandwidth_hz: float) -> float:
    """Mean signal power attributable to a frequency band.

    A full-length Hann-windowed FFT is summed over the band and
    Parseval-normalized (one-sided, window energy compensated) so a pure
    in-band sine of amplitude A measures approximately A**2 / 2.
    """
    x = clip.mono()
    n = len(x)
    rate = clip.sample_rate
    lo, hi = center_hz - bandwidth_hz / 2.0, center_hz + bandwidth_hz / 2.0
    if lo < 0 or hi > rate / 2.0:
        raise ValueError(f"band [{lo}, {hi}] Hz outside [0, {rate / 2}]")
    window = np.hanning(n)
    spec = np.abs(np.fft.rfft(x * window)) ** 2
    k_lo = int(np.ceil(lo * n / rate))
    k_hi = int(np.floor(hi * n / rate))
    return float(2.0 * spec[k_lo : k_hi + 1].sum() / (n * np.sum(window**2)))


@dataclass(frozen=True)
class FeatureConfig:
    """Full front-end config: optional low-pass stage + spectrogram.

    The low-pass is on by default for plain hit corpora; corpora that
    carry the 10 kHz assist tone must disable it (the 252 Hz filter
    attenuates the tone by roughly 64 dB).
    """

    spectrogram: SpectrogramConfig = SpectrogramConfig()
    lowpass_hz: float | None = DEFAULT_LOWPASS_HZ

    def resolve(self, rate: int) -> "FeatureConfig":
        return replace(self, spectrogram=self.spectrogram.resolve(rate))

    def to_dict(self) -> dict:
        return {"spectrogram": self.spectrogram.to_dict(), "lowpass_hz": self.lowpass_hz}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureConfig":
        return cls(
            spectrogram=SpectrogramConfig.from_dict(doc["spectrogram"]),
            lowpass_hz=doc.get("lowpass_hz"),
        )


def features(clip: AudioClip, cfg: FeatureConfig) -> Spectrogram:
    """Apply the configured front end to a mono clip."""
    if cfg.lowpass_hz is not None:
        clip = filter_apply(design_lowpass(cfg.lowpass_hz, clip.sample_rate), clip)
    return spectrogram(clip, cfg.spectrogram)
