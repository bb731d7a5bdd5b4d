"""Stationary 4-index operators stored by their signed-lag symbol.

A stationary operator on ``k1 x k2`` matrices is a two-level Toeplitz
operator: ``B[i, j, k, l] = s(i - k, j - l)``.  The symbol ``s`` is kept on
all signed lags ``h in (-k1, k1)``, ``l in (-k2, k2)`` as a
``(2 k1 - 1) x (2 k2 - 1)`` array whose centre element is lag ``(0, 0)``.
Circularly shifting that array gives the generating symbol of a two-level
circulant embedding, which the 2D FFT diagonalises.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft

from .core import (
    CovTensor4,
    SampleStack,
    _stack_data,
    check_bandwidth,
    check_oracle_size,
)

__all__ = [
    "StationarySymbol",
    "CirculantSpectrum",
    "lag_counts",
    "diagonal_sums",
    "topavg_sample",
    "topavg_direct",
    "topavg_samples",
    "topavg_separable",
    "topavg_stack",
    "topavg_tensor",
    "apply_stationary",
    "psd_project_symbol",
    "symbol_fro_norm",
    "stationary_tensor",
]

# samples per FFT batch in topavg_samples; bounds the transient memory.
_FFT_CHUNK = 32


@dataclass(frozen=True)
class StationarySymbol:
    """Signed-lag symbol of a self-adjoint stationary operator.

    Parameters
    ----------
    s : ndarray, shape (2*k1 - 1, 2*k2 - 1)
        ``s[h + k1 - 1, l + k2 - 1]`` is the value at lag ``(h, l)``.
    band : int, optional
        If given, ``s`` vanishes whenever ``max(|h|, |l|) >= band``.
    """

    s: np.ndarray
    band: int | None = None

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] % 2 == 0 or s.shape[1] % 2 == 0:
            raise ValueError(f"symbol must have odd shape (2k1-1, 2k2-1), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("symbol contains non-finite entries")
        scale = max(float(np.max(np.abs(s))), 1.0)
        if np.max(np.abs(s - s[::-1, ::-1])) > 1e-12 * scale:
            raise ValueError("symbol is not centrally symmetric, s(h,l) != s(-h,-l)")
        s = 0.5 * (s + s[::-1, ::-1])
        if self.band is not None:
            band = check_bandwidth(self.band, max(s.shape), "band")
            s = s * (_lag_max(s.shape) < band)
            object.__setattr__(self, "band", band)
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @classmethod
    def zeros(cls, k1, k2, band=None):
        return cls(np.zeros((2 * k1 - 1, 2 * k2 - 1)), band=band)

    @classmethod
    def delta(cls, k1, k2, value=1.0):
        s = np.zeros((2 * k1 - 1, 2 * k2 - 1))
        s[k1 - 1, k2 - 1] = value
        return cls(s, band=1)

    @property
    def k1(self) -> int:
        return (self.s.shape[0] + 1) // 2

    @property
    def k2(self) -> int:
        return (self.s.shape[1] + 1) // 2

    @property
    def shape(self):
        return (self.k1, self.k2)

    def at(self, h, l):
        """Symbol value at signed lag ``(h, l)``; zero outside the grid."""
        if abs(h) >= self.k1 or abs(l) >= self.k2:
            return 0.0
        return float(self.s[h + self.k1 - 1, l + self.k2 - 1])

    def clip(self, d: int) -> "StationarySymbol":
        """Zero the symbol at lags with ``max(|h|, |l|) >= d``."""
        return StationarySymbol(self.s, band=d)

    def scaled(self, c: float) -> "StationarySymbol":
        return StationarySymbol(c * self.s, band=self.band)

    def __add__(self, other):
        band = None if self.band is None or other.band is None else max(self.band, other.band)
        return StationarySymbol(self.s + other.s, band=band)

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    @cached_property
    def circulant(self) -> np.ndarray:
        """Generating array of the two-level circulant embedding."""
        return sfft.ifftshift(self.s)

    @cached_property
    def spectrum(self) -> "CirculantSpectrum":
        return CirculantSpectrum.of(self)

    @cached_property
    def _rspectrum(self) -> np.ndarray:
        # embedding padded to FFT-friendly sizes; any size >= 2k - 1 is exact
        return sfft.rfft2(_embed(self.s, fast_shape(*self.shape)))


@dataclass(frozen=True)
class CirculantSpectrum:
    """Eigenvalues of the two-level circulant embedding of a symbol."""

    eigenvalues: np.ndarray

    @classmethod
    def of(cls, sym: StationarySymbol, tol=1e-9):
        lam = sfft.fft2(sym.circulant)
        scale = max(float(np.max(np.abs(lam))), 1e-300)
        if np.max(np.abs(lam.imag)) > tol * scale:
            raise ValueError("circulant spectrum has a non-negligible imaginary part")
        return cls(lam.real)

    @property
    def min(self) -> float:
        return float(self.eigenvalues.min())

    @property
    def max(self) -> float:
        return float(self.eigenvalues.max())


def fast_shape(k1, k2):
    """Smallest FFT-friendly grid holding all signed lags without wrap-around."""
    return (sfft.next_fast_len(2 * k1 - 1, real=True), sfft.next_fast_len(2 * k2 - 1, real=True))


def _embed(s, shape):
    """Place a centred signed-lag array on a periodic grid (lag h at index h mod m)."""
    r1, r2 = (s.shape[0] - 1) // 2, (s.shape[1] - 1) // 2
    g = np.zeros(shape)
    g[: s.shape[0], : s.shape[1]] = s
    return np.roll(g, (-r1, -r2), axis=(0, 1))


def _extract(g, k1, k2):
    """Inverse of :func:`_embed`: signed lags ``|h| < k1, |l| < k2`` from a periodic grid."""
    return np.roll(g, (k1 - 1, k2 - 1), axis=(0, 1))[: 2 * k1 - 1, : 2 * k2 - 1]


def _lag_max(shape):
    """``max(|h|, |l|)`` over a centred signed-lag array of the given shape."""
    m1, m2 = shape
    h = np.abs(np.arange(m1) - (m1 - 1) // 2)
    l = np.abs(np.arange(m2) - (m2 - 1) // 2)
    return np.maximum(h[:, None], l[None, :])


def lag_counts(k1, k2) -> np.ndarray:
    """Number of cell pairs at each signed lag, ``(k1 - |h|) (k2 - |l|)``."""
    c1 = k1 - np.abs(np.arange(-(k1 - 1), k1))
    c2 = k2 - np.abs(np.arange(-(k2 - 1), k2))
    return np.outer(c1, c2).astype(np.float64)


def _divisor(k1, k2, divisor):
    if divisor == "grid":
        return float(k1 * k2)
    if divisor == "count":
        return lag_counts(k1, k2)
    raise ValueError(f"divisor must be 'grid' or 'count', got {divisor!r}")


# --------------------------------------------------------------------------
# Toeplitz averaging


def _autocorr_sum(x):
    """Sum over samples of the non-circular 2D autocorrelation, all signed lags."""
    x = _stack_data(x)
    n, k1, k2 = x.shape
    shape = fast_shape(k1, k2)
    power = np.zeros((shape[0], shape[1] // 2 + 1))
    for start in range(0, n, _FFT_CHUNK):
        f = sfft.rfft2(x[start : start + _FFT_CHUNK], s=shape, axes=(1, 2))
        power += np.sum(f.real**2 + f.imag**2, axis=0)
    return _extract(sfft.irfft2(power, s=shape), k1, k2)


def topavg_sample(x, divisor="grid") -> StationarySymbol:
    """Toeplitz average of ``x (x) x`` via ``ifft(|fft(x)|^2)`` on a zero-padded grid.

    ``s(h, l) = sum_{i, j} x[i, j] x[i + h, j + l] / (k1 k2)`` for every
    signed lag; ``divisor="count"`` divides by the number of terms instead.
    """
    x = np.asarray(x, dtype=np.float64)
    k1, k2 = x.shape
    return StationarySymbol(_autocorr_sum(x) / _divisor(k1, k2, divisor))


def topavg_samples(samples, divisor="grid") -> StationarySymbol:
    """Average of :func:`topavg_sample` over a stack (FFT batched in chunks)."""
    x = _stack_data(samples)
    n, k1, k2 = x.shape
    return StationarySymbol(_autocorr_sum(x) / (n * _divisor(k1, k2, divisor)))


def topavg_direct(x, divisor="grid") -> StationarySymbol:
    """Lag-by-lag summation path of :func:`topavg_sample` (reference, O(K^4))."""
    x = np.asarray(x, dtype=np.float64)
    k1, k2 = x.shape
    s = np.zeros((2 * k1 - 1, 2 * k2 - 1))
    for h in range(-(k1 - 1), k1):
        rows = slice(max(0, -h), k1 - max(0, h))
        rows_shift = slice(max(0, h), k1 - max(0, -h))
        for l in range(-(k2 - 1), k2):
            cols = slice(max(0, -l), k2 - max(0, l))
            cols_shift = slice(max(0, l), k2 - max(0, -l))
            s[h + k1 - 1, l + k2 - 1] = np.sum(x[rows, cols] * x[rows_shift, cols_shift])
    return StationarySymbol(s / _divisor(k1, k2, divisor))


def diagonal_sums(a) -> np.ndarray:
    """``t[h + k - 1] = sum_i a[i, i + h]`` for ``h in (-k, k)``."""
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[0]
    return np.array([np.trace(a, offset=h) for h in range(-(k - 1), k)])


def topavg_separable(a1, a2, divisor="grid") -> StationarySymbol:
    """Toeplitz average of ``a1 (x) a2`` from the signed diagonal sums of the factors."""
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    k1, k2 = a1.shape[0], a2.shape[0]
    s = np.outer(diagonal_sums(a1), diagonal_sums(a2))
    return StationarySymbol(s / _divisor(k1, k2, divisor))


def topavg_stack(samples, a1, a2, d=None, divisor="grid") -> StationarySymbol:
    """Toeplitz average of ``C_N - a1 (x) a2``, optionally band-clipped to ``d``.

    ``samples`` are used as given; centre them beforehand if required.
    """
    sym = topavg_samples(samples, divisor=divisor) - topavg_separable(a1, a2, divisor=divisor)
    return sym if d is None else sym.clip(d)


def topavg_tensor(t: CovTensor4, divisor="grid") -> StationarySymbol:
    """Toeplitz average of a dense tensor by direct lag sums (oracle scale)."""
    a = t.data
    k1, k2 = a.shape[:2]
    s = np.zeros((2 * k1 - 1, 2 * k2 - 1))
    for i in range(k1):
        for j in range(k2):
            # contributes a[i, j, i + h, j + l] to lag (h, l)
            s[k1 - 1 - i : 2 * k1 - 1 - i, k2 - 1 - j : 2 * k2 - 1 - j] += a[i, j]
    return StationarySymbol(s / _divisor(k1, k2, divisor))


def stationary_tensor(sym: StationarySymbol, cap=None) -> CovTensor4:
    """Dense ``B[i, j, k, l] = s(i - k, j - l)`` (oracle scale)."""
    k1, k2 = sym.shape
    kw = {} if cap is None else {"cap": cap}
    check_oracle_size(k1, k2, **kw)
    i = np.arange(k1)
    j = np.arange(k2)
    h = (i[:, None, None, None] - i[None, None, :, None]) + k1 - 1
    l = (j[None, :, None, None] - j[None, None, None, :]) + k2 - 1
    return CovTensor4(sym.s[h, l], **kw)


# --------------------------------------------------------------------------
# application, projection, norms


def apply_stationary(sym: StationarySymbol, x) -> np.ndarray:
    """``y[i, j] = sum_{k, l} s(i - k, j - l) x[k, l]`` by circulant embedding.

    ``x`` may be a single ``k1 x k2`` matrix or a stack ``(n, k1, k2)``.
    """
    x = np.asarray(x, dtype=np.float64)
    k1, k2 = sym.shape
    if x.shape[-2:] != (k1, k2):
        raise ValueError(f"input shape {x.shape[-2:]} does not match symbol grid {(k1, k2)}")
    shape = fast_shape(k1, k2)
    fx = sfft.rfft2(x, s=shape, axes=(-2, -1))
    y = sfft.irfft2(fx * sym._rspectrum, s=shape, axes=(-2, -1))
    return y[..., :k1, :k2]


def psd_project_symbol(sym: StationarySymbol) -> StationarySymbol:
    """Positive part of a symbol: clamp the negative circulant eigenvalues to zero."""
    lam = np.maximum(sym.spectrum.eigenvalues, 0.0)
    circ = sfft.ifft2(lam).real
    return StationarySymbol(sfft.fftshift(circ))


def symbol_fro_norm(sym: StationarySymbol) -> float:
    """Frobenius norm of the represented ``k1 x k2 x k1 x k2`` operator."""
    return float(np.sqrt(np.sum(lag_counts(*sym.shape) * sym.s**2)))
