"""Signal conditioning for PCG waveforms: resampling, Butterworth band-pass,
zero-phase filtering, z-score normalisation and training-time augmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "Waveform",
    "BandpassSpec",
    "IirFilter",
    "PreprocessConfig",
    "AugmentConfig",
    "resample",
    "design_butterworth_bandpass",
    "freq_response",
    "filtfilt",
    "zscore",
    "preprocess",
    "colored_noise",
    "augment",
]


@dataclass
class Waveform:
    """A single-channel signal and its sampling rate in Hz."""

    samples: np.ndarray
    fs: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.fs) != self.fs or self.fs <= 0:
            raise ValueError(f"sampling rate must be a positive integer, got {self.fs}")
        self.fs = int(self.fs)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs


@dataclass(frozen=True)
class BandpassSpec:
    order: int = 3
    f_low: float = 25.0
    f_high: float = 400.0

    def validate(self, fs: float) -> None:
        if self.order < 1:
            raise ValueError(f"filter order must be >= 1, got {self.order}")
        if self.f_low <= 0:
            raise ValueError(f"low cutoff must be positive, got {self.f_low}")
        if self.f_high <= self.f_low:
            raise ValueError(f"high cutoff {self.f_high} must exceed low cutoff {self.f_low}")
        if self.f_high >= fs / 2:
            raise ValueError(f"high cutoff {self.f_high} Hz must be below Nyquist ({fs / 2} Hz)")


@dataclass(frozen=True)
class IirFilter:
    """Transfer function ``b(z)/a(z)`` with ``a[0] == 1``.

    ``p`` optionally keeps the poles from the design; rooting a high-order
    ``a`` for a narrow band is ill-conditioned and can misplace them.
    """

    b: np.ndarray
    a: np.ndarray
    p: Optional[np.ndarray] = None

    def poles(self) -> np.ndarray:
        return np.asarray(self.p) if self.p is not None else np.roots(self.a)

    def is_stable(self, margin: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0 - margin))


# ---------------------------------------------------------------------------
# resampling


def _kaiser_sinc(up: int, down: int, taps_per_phase: int, beta: float) -> np.ndarray:
    """Low-pass prototype at the upsampled rate, cutoff at the lower Nyquist."""
    n_taps = taps_per_phase * up
    n_taps += 1 - n_taps % 2  # odd length keeps the group delay an integer
    cutoff = 1.0 / max(up, down)  # fraction of the upsampled Nyquist
    t = np.arange(n_taps) - (n_taps - 1) / 2.0
    h = cutoff * np.sinc(cutoff * t) * np.kaiser(n_taps, beta)
    # unity DC gain for every polyphase branch after the zero-stuffing gain `up`
    return h * (up / h.sum())


def resample(
    w: Waveform,
    target_fs: int,
    taps_per_phase: int = 64,
    beta: float = 8.6,
) -> Waveform:
    """Rational polyphase resampling with a Kaiser-windowed sinc anti-alias filter.

    The output has ``round(len(w) * target_fs / w.fs)`` samples and the filter
    delay is compensated, so output sample ``n`` sits at time ``n / target_fs``.
    """
    if target_fs is None or target_fs <= 0:
        raise ValueError(f"target sampling rate must be positive, got {target_fs}")
    if int(target_fs) != target_fs:
        raise ValueError(f"target sampling rate must be an integer, got {target_fs}")
    target_fs = int(target_fs)
    if target_fs == w.fs:
        return Waveform(w.samples.copy(), w.fs)

    ratio = Fraction(target_fs, w.fs)
    up, down = ratio.numerator, ratio.denominator
    h = _kaiser_sinc(up, down, taps_per_phase, beta)
    delay = (h.size - 1) // 2
    n_phase_taps = -(-h.size // up)
    h = np.pad(h, (0, n_phase_taps * up - h.size))

    x = w.samples
    n_out = int(round(x.size * target_fs / w.fs))
    # position of output n on the upsampled grid, shifted by the filter delay
    pos = np.arange(n_out, dtype=np.int64) * down + delay
    phase = pos % up
    base = pos // up
    j = np.arange(n_phase_taps)
    x_idx = base[:, None] - j[None, :]
    h_idx = phase[:, None] + j[None, :] * up
    valid = (x_idx >= 0) & (x_idx < x.size)
    xs = np.where(valid, x[np.clip(x_idx, 0, x.size - 1)], 0.0)
    y = np.einsum("ij,ij->i", xs, h[h_idx])
    return Waveform(y, target_fs)


# ---------------------------------------------------------------------------
# Butterworth design


def design_butterworth_bandpass(spec: BandpassSpec, fs: float) -> IirFilter:
    """Digital Butterworth band-pass of order ``2 * spec.order``.

    Analog prototype poles, low-pass to band-pass transform on pre-warped
    edges, then the bilinear transform.
    """
    spec.validate(fs)
    n = spec.order
    k = np.arange(1, n + 1)
    proto = np.exp(1j * np.pi * (2 * k + n - 1) / (2 * n))

    warped_low = 2.0 * fs * math.tan(math.pi * spec.f_low / fs)
    warped_high = 2.0 * fs * math.tan(math.pi * spec.f_high / fs)
    bw = warped_high - warped_low
    w0_sq = warped_low * warped_high

    # each prototype pole p maps to the two roots of s^2 - p*bw*s + w0^2
    pb = proto * bw / 2.0
    disc = np.sqrt(pb * pb - w0_sq)
    poles_a = np.concatenate([pb + disc, pb - disc])
    zeros_a = np.zeros(n)  # n more zeros sit at infinity
    gain_a = bw**n

    fs2 = 2.0 * fs
    zeros_d = np.concatenate([(fs2 + zeros_a) / (fs2 - zeros_a), -np.ones(n)])
    poles_d = (fs2 + poles_a) / (fs2 - poles_a)
    gain_d = gain_a * np.real(np.prod(fs2 - zeros_a) / np.prod(fs2 - poles_a))

    b = gain_d * np.real(np.poly(zeros_d))
    a = np.real(np.poly(poles_d))
    return IirFilter(b=b, a=a, p=poles_d)


def freq_response(f: IirFilter, freqs: Sequence[float], fs: float) -> np.ndarray:
    """Complex single-pass response ``H(e^{j 2 pi f / fs})`` at the given frequencies."""
    z = np.exp(-2j * np.pi * np.asarray(freqs, dtype=np.float64) / fs)
    num = np.polyval(f.b[::-1], z)
    den = np.polyval(f.a[::-1], z)
    return num / den


def _lfilter_zi(b: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Steady-state initial conditions for a unit step input."""
    n = max(a.size, b.size)
    a = np.pad(a, (0, n - a.size))
    b = np.pad(b, (0, n - b.size))
    companion = np.zeros((n - 1, n - 1))
    companion[0, :] = -a[1:] / a[0]
    companion[np.arange(1, n - 1), np.arange(0, n - 2)] = 1.0
    rhs = b[1:] - a[1:] * b[0]
    return np.linalg.solve(np.eye(n - 1) - companion.T, rhs)


def filtfilt(f: IirFilter, w: Waveform) -> Waveform:
    """Zero-phase forward-backward application of ``f`` with odd edge padding."""
    b, a = np.asarray(f.b, dtype=np.float64), np.asarray(f.a, dtype=np.float64)
    order_len = max(a.size, b.size)
    x = w.samples
    if x.size <= 3 * order_len:
        raise ValueError(
            f"signal of length {x.size} is too short for zero-phase filtering; "
            f"need more than {3 * order_len} samples"
        )
    padlen = 3 * (order_len - 1)
    head = 2.0 * x[0] - x[padlen:0:-1]
    tail = 2.0 * x[-1] - x[-2 : -padlen - 2 : -1]
    ext = np.concatenate([head, x, tail])

    zi = _lfilter_zi(b, a)
    y, _ = lfilter(b, a, ext, zi=zi * ext[0])
    y = y[::-1]
    y, _ = lfilter(b, a, y, zi=zi * y[0])
    y = y[::-1]
    return Waveform(y[padlen:-padlen], w.fs)


def zscore(w: Waveform, eps: float = 1e-8) -> Waveform:
    x = w.samples
    std = x.std()
    if std < eps:
        return Waveform(np.zeros_like(x), w.fs)
    return Waveform((x - x.mean()) / std, w.fs)


@dataclass(frozen=True)
class PreprocessConfig:
    fs: int = 1000
    bandpass: BandpassSpec = field(default_factory=BandpassSpec)


def preprocess(w: Waveform, cfg: Optional[PreprocessConfig] = None) -> Waveform:
    """Resample, band-pass (zero phase) and z-score a raw recording."""
    cfg = cfg or PreprocessConfig()
    out = resample(w, cfg.fs)
    out = filtfilt(design_butterworth_bandpass(cfg.bandpass, cfg.fs), out)
    return zscore(out)


# ---------------------------------------------------------------------------
# augmentation


def colored_noise(n: int, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance noise with power spectrum proportional to 1/f**beta."""
    if n <= 1:
        raise ValueError(f"noise length must exceed 1, got {n}")
    if not 0.0 <= beta <= 2.0:
        raise ValueError(f"spectral exponent must lie in [0, 2], got {beta}")
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n)
    scale = np.zeros_like(f)
    scale[1:] = f[1:] ** (-beta / 2.0)
    y = np.fft.irfft(spectrum * scale, n=n)
    y -= y.mean()
    return y / y.std()


@dataclass(frozen=True)
class AugmentConfig:
    p_noise: float = 0.5
    p_flip: float = 0.5
    snr_db: Tuple[float, float] = (6.0, 18.0)
    betas: Tuple[float, ...] = (0.0, 1.0, 2.0)  # white, pink, brown


def augment(w: Waveform, cfg: AugmentConfig, rng: np.random.Generator) -> Waveform:
    """Stochastic coloured-noise addition followed by polarity inversion."""
    x = w.samples
    if rng.random() < cfg.p_noise:
        beta = float(cfg.betas[rng.integers(len(cfg.betas))])
        snr = rng.uniform(*cfg.snr_db)
        noise = colored_noise(x.size, beta, rng)
        p_signal = np.mean(x * x)
        x = x + noise * math.sqrt(p_signal / 10.0 ** (snr / 10.0))
    if rng.random() < cfg.p_flip:
        x = -x
    return Waveform(x, w.fs)
