"""Windowed-sinc band-pass filters parametrized by two cutoff frequencies.

All frequencies inside this module are normalized (Hz divided by the sample
rate, Nyquist = 0.5). Conversion to Hz happens only at I/O boundaries.

Filters are evaluated on centered integer indices ``m = -(L-1)/2 .. (L-1)/2``
so every filter is even-symmetric with linear phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "CutoffParams",
    "EvalCounter",
    "SincFilterBank",
    "build_filter",
    "build_half_filter",
    "cumulative_response",
    "filter_gradients",
    "frequency_response",
    "hamming_window",
    "hz_to_mel",
    "mel_initialize",
    "mel_to_hz",
    "mirror_half",
    "reparametrize",
    "reparametrize_jacobian",
    "sinc",
]


def _require_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise InvalidParameterError(f"{name} must be finite, got {value!r}")


def reparametrize(f1_raw, f2_raw):
    """Map raw learnable cutoffs to an admissible band ``0 <= f1 <= f2``.

    ``f1 = |f1_raw|`` and ``f2 = |f1_raw| + |f2_raw - f1_raw|``. Works on
    scalars and arrays alike.
    """
    _require_finite("f1_raw", f1_raw)
    _require_finite("f2_raw", f2_raw)
    f1_abs = np.abs(f1_raw)
    f2_abs = f1_abs + np.abs(np.subtract(f2_raw, f1_raw))
    return f1_abs, f2_abs


def reparametrize_jacobian(f1_raw, f2_raw):
    """Partial derivatives of :func:`reparametrize`.

    Returns ``(df1_df1raw, df2_df1raw, df2_df2raw)``; ``df1/df2raw`` is
    identically zero. ``np.sign`` gives the zero subgradient at the kinks.
    """
    s1 = np.sign(f1_raw)
    s21 = np.sign(np.subtract(f2_raw, f1_raw))
    return s1, s1 - s21, s21


def sinc(x):
    """``sin(x)/x`` with the removable singularity filled in as exactly 1."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(x == 0.0, 1.0, np.sin(x) / x)
    return out[()] if out.ndim == 0 else out


def _check_length(length):
    if int(length) != length or length < 3 or length % 2 == 0:
        raise InvalidParameterError(f"filter length must be odd and >= 3, got {length!r}")
    return int(length)


def mirror_half(half):
    """Rebuild a full even-symmetric array from its ``center + right`` half."""
    half = np.asarray(half)
    return np.concatenate([half[..., :0:-1], half], axis=-1)


def hamming_window(length):
    """Symmetric Hamming window ``0.54 - 0.46 cos(2 pi n / (L - 1))``.

    The endpoints are exactly 0.08 and the center sample is exactly 1.0. The
    right half is a bitwise mirror of the left half.
    """
    length = _check_length(length)
    center = (length - 1) // 2
    n = np.arange(center + 1, dtype=np.float64)
    left = 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))
    window = np.concatenate([left, left[-2::-1]])
    window.setflags(write=False)
    return window


def _check_window(window, length):
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (length,):
        raise InvalidParameterError(
            f"window has shape {window.shape}, expected ({length},)")
    return window


def _check_band(f1_abs, f2_abs):
    f1 = np.asarray(f1_abs, dtype=np.float64)
    f2 = np.asarray(f2_abs, dtype=np.float64)
    _require_finite("f1_abs", f1)
    _require_finite("f2_abs", f2)
    if np.any(f1 < 0) or np.any(f1 > f2):
        raise InvalidParameterError(
            f"cutoffs must satisfy 0 <= f1 <= f2, got f1={f1_abs!r}, f2={f2_abs!r}")
    # trailing axis so per-filter arrays broadcast against the tap index
    return f1[..., None], f2[..., None]


@dataclass
class EvalCounter:
    """Counts sinc-pair evaluations, one per tap index computed."""

    pairs: int = 0


def _band_kernel(f1, f2, m):
    return 2.0 * f2 * sinc(2.0 * np.pi * f2 * m) - 2.0 * f1 * sinc(2.0 * np.pi * f1 * m)


def build_filter(f1_abs, f2_abs, length, window=None, counter=None):
    """Windowed band-pass taps over the full support of ``length`` samples.

    ``f1_abs`` and ``f2_abs`` may be scalars or equal-length 1-D arrays (one
    filter per entry), giving ``(L,)`` or ``(F, L)`` output.
    """
    length = _check_length(length)
    window = hamming_window(length) if window is None else _check_window(window, length)
    f1, f2 = _check_band(f1_abs, f2_abs)
    center = (length - 1) // 2
    m = np.arange(-center, center + 1, dtype=np.float64)
    if counter is not None:
        counter.pairs += length
    return _band_kernel(f1, f2, m) * window


def build_half_filter(f1_abs, f2_abs, length, window=None, counter=None):
    """Center tap plus the right half; ``mirror_half`` restores the full filter."""
    length = _check_length(length)
    window = hamming_window(length) if window is None else _check_window(window, length)
    f1, f2 = _check_band(f1_abs, f2_abs)
    center = (length - 1) // 2
    m = np.arange(0, center + 1, dtype=np.float64)
    if counter is not None:
        counter.pairs += center + 1
    return _band_kernel(f1, f2, m) * window[center:]


def filter_gradients(f1_abs, f2_abs, length, window=None):
    """Analytic derivatives of the windowed taps w.r.t. ``f1_abs`` and ``f2_abs``.

    d/df [2 f sinc(2 pi f m)] = 2 cos(2 pi f m), which is continuous at m = 0.
    """
    length = _check_length(length)
    window = hamming_window(length) if window is None else _check_window(window, length)
    f1, f2 = _check_band(f1_abs, f2_abs)
    center = (length - 1) // 2
    m = np.arange(-center, center + 1, dtype=np.float64)
    d_df1 = -2.0 * np.cos(2.0 * np.pi * f1 * m) * window
    d_df2 = 2.0 * np.cos(2.0 * np.pi * f2 * m) * window
    return d_df1, d_df2


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class CutoffParams:
    """Raw learnable cutoff pairs, normalized frequency, one entry per filter."""

    f1_raw: np.ndarray
    f2_raw: np.ndarray

    def __post_init__(self):
        f1 = np.atleast_1d(np.asarray(self.f1_raw, dtype=np.float64)).copy()
        f2 = np.atleast_1d(np.asarray(self.f2_raw, dtype=np.float64)).copy()
        if f1.shape != f2.shape or f1.ndim != 1:
            raise InvalidParameterError(
                f"f1_raw and f2_raw must be matching 1-D arrays, got {f1.shape} and {f2.shape}")
        _require_finite("f1_raw", f1)
        _require_finite("f2_raw", f2)
        f1.setflags(write=False)
        f2.setflags(write=False)
        object.__setattr__(self, "f1_raw", f1)
        object.__setattr__(self, "f2_raw", f2)

    @property
    def count(self):
        return self.f1_raw.shape[0]

    def absolute(self):
        return reparametrize(self.f1_raw, self.f2_raw)


def mel_initialize(n_filters, sample_rate, f_min=30.0, f_max=None):
    """Cutoffs of a triangular mel bank: filter ``k`` spans mel points ``k .. k+2``."""
    if f_max is None:
        f_max = sample_rate / 2.0
    if n_filters < 1:
        raise InvalidParameterError(f"need at least one filter, got {n_filters}")
    if not (0.0 <= f_min < f_max <= sample_rate / 2.0):
        raise InvalidParameterError(
            f"need 0 <= f_min < f_max <= fs/2, got f_min={f_min}, f_max={f_max}, fs={sample_rate}")
    mel_points = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2)
    hz_points = mel_to_hz(mel_points)
    return CutoffParams(hz_points[:-2] / sample_rate, hz_points[2:] / sample_rate)


@dataclass(frozen=True)
class SincFilterBank:
    """Materialized taps of a bank, built from half filters and mirrored."""

    taps: np.ndarray
    half_taps: np.ndarray
    length: int
    sample_rate: float
    f1_abs: np.ndarray = field(repr=False)
    f2_abs: np.ndarray = field(repr=False)

    @classmethod
    def from_cutoffs(cls, params, length, sample_rate, window=None, counter=None):
        f1_abs, f2_abs = params.absolute()
        half = build_half_filter(f1_abs, f2_abs, length, window, counter=counter)
        taps = mirror_half(half)
        for arr in (half, taps, f1_abs, f2_abs):
            arr.setflags(write=False)
        return cls(taps, half, int(length), float(sample_rate), f1_abs, f2_abs)

    @property
    def n_filters(self):
        return self.taps.shape[0]

    def band_edges_hz(self):
        return self.f1_abs * self.sample_rate, self.f2_abs * self.sample_rate

    def frequency_response(self, n_fft=4096):
        return frequency_response(self.taps, n_fft)


def _dft_matrix(length, n_fft):
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(length)[None, :]
    # reduce k*n modulo n_fft so the phase argument stays small and exact
    return np.exp(-2j * np.pi * ((k * n) % n_fft) / n_fft)


def frequency_response(taps, n_fft=4096):
    """Magnitude of the zero-padded DFT by direct summation, bins ``0 .. n_fft/2``.

    ``taps`` may be ``(L,)`` or ``(F, L)``.
    """
    taps = np.asarray(taps, dtype=np.float64)
    length = taps.shape[-1]
    if n_fft < length:
        raise InvalidParameterError(f"n_fft={n_fft} is shorter than the filter length {length}")
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise InvalidParameterError(f"n_fft must be a power of two, got {n_fft}")
    return np.abs(taps @ _dft_matrix(length, n_fft).T)


def cumulative_response(bank, n_fft=4096):
    """Element-wise sum of the magnitude responses of every filter in ``bank``."""
    taps = bank.taps if isinstance(bank, SincFilterBank) else np.atleast_2d(bank)
    if taps.shape[0] == 0:
        raise InvalidParameterError("filter bank is empty")
    return frequency_response(taps, n_fft).sum(axis=0)


def response_freqs_hz(n_fft, sample_rate):
    return np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
