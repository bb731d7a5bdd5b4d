"""Structured covariance representations: separable-plus-banded models and friends."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ORACLE_CAP, CovTensor4, SampleStack, check_oracle_size, separable_tensor
from .stationary import StationarySymbol, apply_stationary, stationary_tensor

__all__ = [
    "BandedTensor",
    "EmpiricalCov",
    "SepPlusBandedCov",
    "shift_diagonals",
    "apply_separable",
]


def apply_separable(a1, a2, x) -> np.ndarray:
    """``(a1 (x) a2) x = a1 @ x @ a2.T``; broadcasts over a leading stack axis."""
    return np.asarray(a1) @ np.asarray(x, dtype=np.float64) @ np.asarray(a2).T


def shift_diagonals(a, d: int) -> np.ndarray:
    """``out[i, p + d - 1] = a[i, i + p]`` for ``|p| < d`` (zero off the grid)."""
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[0]
    out = np.zeros((k, 2 * d - 1))
    for p in range(-(d - 1), d):
        lo, hi = max(0, -p), min(k, k - p)
        if lo < hi:
            idx = np.arange(lo, hi)
            out[idx, p + d - 1] = a[idx, idx + p]
    return out


@dataclass(frozen=True)
class BandedTensor:
    """Non-stationary banded operator in band storage.

    ``b[i, j, p + d - 1, q + d - 1] = B[i, j, i + p, j + q]`` for
    ``|p|, |q| < d``; entries whose partner cell falls off the grid are zero.
    """

    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        if b.ndim != 4 or b.shape[2] != b.shape[3] or b.shape[2] % 2 == 0:
            raise ValueError(f"band storage must be (k1, k2, 2d-1, 2d-1), got {b.shape}")
        b = b * self._valid_mask(b.shape)
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @staticmethod
    def _valid_mask(shape):
        k1, k2, m, _ = shape
        d = (m + 1) // 2
        p = np.arange(-(d - 1), d)
        i = np.arange(k1)
        j = np.arange(k2)
        ok1 = (i[:, None] + p[None, :] >= 0) & (i[:, None] + p[None, :] < k1)
        ok2 = (j[:, None] + p[None, :] >= 0) & (j[:, None] + p[None, :] < k2)
        return ok1[:, None, :, None] & ok2[None, :, None, :]

    @property
    def k1(self) -> int:
        return self.b.shape[0]

    @property
    def k2(self) -> int:
        return self.b.shape[1]

    @property
    def shape(self):
        return self.b.shape[:2]

    @property
    def d(self) -> int:
        return (self.b.shape[2] + 1) // 2

    @property
    def band(self) -> int:
        return self.d

    def variance_map(self) -> np.ndarray:
        """Lag-zero slice ``B[i, j, i, j]``."""
        return np.array(self.b[:, :, self.d - 1, self.d - 1])

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k1, k2 = self.shape
        d = self.d
        pad = [(0, 0)] * (x.ndim - 2) + [(d - 1, d - 1), (d - 1, d - 1)]
        xp = np.pad(x, pad)
        y = np.zeros(x.shape)
        for p in range(2 * d - 1):
            for q in range(2 * d - 1):
                y += self.b[:, :, p, q] * xp[..., p : p + k1, q : q + k2]
        return y

    def to_tensor(self, cap=ORACLE_CAP) -> CovTensor4:
        k1, k2 = self.shape
        check_oracle_size(k1, k2, cap)
        t = np.zeros((k1, k2, k1, k2))
        d = self.d
        for i in range(k1):
            for j in range(k2):
                for p in range(-(d - 1), d):
                    for q in range(-(d - 1), d):
                        if 0 <= i + p < k1 and 0 <= j + q < k2:
                            t[i, j, i + p, j + q] = self.b[i, j, p + d - 1, q + d - 1]
        return CovTensor4(t, cap=cap)

    @classmethod
    def from_tensor(cls, t: CovTensor4, d: int) -> "BandedTensor":
        """Band-limited restriction of a dense tensor (entries with max lag < d)."""
        k1, k2 = t.k1, t.k2
        b = np.zeros((k1, k2, 2 * d - 1, 2 * d - 1))
        for p in range(-(d - 1), d):
            for q in range(-(d - 1), d):
                for i in range(max(0, -p), min(k1, k1 - p)):
                    for j in range(max(0, -q), min(k2, k2 - q)):
                        b[i, j, p + d - 1, q + d - 1] = t.data[i, j, i + p, j + q]
        return cls(b)

    @classmethod
    def from_symbol(cls, sym: StationarySymbol, d: int | None = None) -> "BandedTensor":
        """Band storage of a stationary operator restricted to lags ``< d``."""
        d = sym.band if d is None else d
        if d is None:
            raise ValueError("symbol has no band; pass d explicitly")
        k1, k2 = sym.shape
        b = np.empty((k1, k2, 2 * d - 1, 2 * d - 1))
        for p in range(-(d - 1), d):
            for q in range(-(d - 1), d):
                b[:, :, p + d - 1, q + d - 1] = sym.at(-p, -q)
        return cls(b)


@dataclass(frozen=True)
class EmpiricalCov:
    """``(1/N) sum_n x_n (x) x_n`` kept as its factors (never densified)."""

    samples: SampleStack

    @property
    def shape(self):
        return self.samples.shape

    def apply(self, x) -> np.ndarray:
        data = self.samples.data
        x = np.asarray(x, dtype=np.float64)
        coef = np.einsum("nij,...ij->n...", data, x)
        return np.einsum("n...,nij->...ij", coef, data) / self.samples.n

    def to_tensor(self, cap=ORACLE_CAP) -> CovTensor4:
        data = self.samples.data
        check_oracle_size(data.shape[1], data.shape[2], cap)
        return CovTensor4(np.einsum("nij,nkl->ijkl", data, data) / len(data), cap=cap)


@dataclass(frozen=True)
class SepPlusBandedCov:
    """``a1 (x) a2 + B`` with ``B`` stationary, band-stored, or absent.

    Only the product ``a1 (x) a2`` is identified; by convention ``a2``
    carries the division by the shifted trace.
    """

    a1: np.ndarray
    a2: np.ndarray
    banded: StationarySymbol | BandedTensor | None = None
    d: int = 0
    scale_convention: str = "a2-normalized"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a1 = np.asarray(self.a1, dtype=np.float64)
        a2 = np.asarray(self.a2, dtype=np.float64)
        if a1.ndim != 2 or a1.shape[0] != a1.shape[1] or a2.ndim != 2 or a2.shape[0] != a2.shape[1]:
            raise ValueError("separable factors must be square matrices")
        if self.banded is not None and tuple(self.banded.shape) != (a1.shape[0], a2.shape[0]):
            raise ValueError("banded part does not match the factor sizes")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)

    @property
    def k1(self) -> int:
        return self.a1.shape[0]

    @property
    def k2(self) -> int:
        return self.a2.shape[0]

    @property
    def shape(self):
        return (self.k1, self.k2)

    @property
    def banded_kind(self) -> str:
        if self.banded is None:
            return "none"
        return "stationary" if isinstance(self.banded, StationarySymbol) else "banded"

    def apply(self, x) -> np.ndarray:
        y = apply_separable(self.a1, self.a2, x)
        if isinstance(self.banded, StationarySymbol):
            y = y + apply_stationary(self.banded, x)
        elif self.banded is not None:
            y = y + self.banded.apply(x)
        return y

    def to_tensor(self, cap=ORACLE_CAP) -> CovTensor4:
        t = separable_tensor(self.a1, self.a2, cap=cap)
        if isinstance(self.banded, StationarySymbol):
            t = t + stationary_tensor(self.banded, cap=cap)
        elif self.banded is not None:
            t = t + self.banded.to_tensor(cap=cap)
        return t

    def scaled(self, c: float) -> "SepPlusBandedCov":
        banded = self.banded
        if isinstance(banded, StationarySymbol):
            banded = banded.scaled(c)
        elif banded is not None:
            banded = BandedTensor(c * banded.b)
        return SepPlusBandedCov(c * self.a1, self.a2, banded, self.d, self.scale_convention, dict(self.meta))

    def canonical(self) -> "SepPlusBandedCov":
        """Same operator with ``||a1||_F = 1`` (display convention)."""
        n1 = np.linalg.norm(self.a1)
        if n1 == 0:
            return self
        return SepPlusBandedCov(
            self.a1 / n1, self.a2 * n1, self.banded, self.d, "a1-unit-norm", dict(self.meta)
        )
