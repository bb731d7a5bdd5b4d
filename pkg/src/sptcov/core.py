"""Value types and shifted (partial) tracing on sample matrices and dense tensors.

Index convention used throughout the package: a 4-index covariance ``T`` has
shape ``(k1, k2, k1, k2)`` and acts on a ``k1 x k2`` matrix ``x`` as

    (T x)[i, j] = sum_{k, l} T[i, j, k, l] * x[k, l]

so that the separable operator ``a1 (x) a2`` maps ``x`` to ``a1 @ x @ a2.T``.
The first grid axis is paired with ``a1`` and the second with ``a2``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SptError",
    "BandwidthError",
    "DegenerateTraceError",
    "OracleCapError",
    "SampleStack",
    "CovTensor4",
    "ORACLE_CAP",
    "symmetrize",
    "check_bandwidth",
    "delta_to_bandwidth",
    "spt1_sample",
    "spt2_sample",
    "strace_sample",
    "spt1_stack",
    "spt2_stack",
    "strace_stack",
    "spt_tensor",
    "strace_tensor",
    "strace_matrix",
    "separable_tensor",
    "outer_tensor",
    "make_rng",
    "thread_count",
    "parallel_map",
]

#: Maximum number of grid points ``k1 * k2`` for which a dense 4-index tensor
#: may be built (256 points -> 256**2 doubles = 0.5 MB).
ORACLE_CAP = 256


class SptError(Exception):
    """Base class for errors raised by this package."""


class BandwidthError(SptError, ValueError):
    """Bandwidth outside the admissible range."""


class DegenerateTraceError(SptError, ArithmeticError):
    """The shifted trace used for normalisation is (numerically) zero."""

    def __init__(self, d, value):
        self.d = d
        self.value = value
        super().__init__(f"shifted trace at d={d} is degenerate ({value:.3e})")


class OracleCapError(SptError, MemoryError):
    """Refusal to materialise a dense K1 x K2 x K1 x K2 tensor."""


@dataclass(frozen=True)
class SampleStack:
    """N replicated observations of a ``k1 x k2`` random matrix."""

    data: np.ndarray
    centered: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"expected an (n, k1, k2) array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("sample stack contains non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.centered:
            scale = max(float(np.max(np.abs(data))), 1.0e-300)
            if np.max(np.abs(data.mean(axis=0))) > 1e-10 * scale:
                raise ValueError("stack flagged as centered has non-zero cell means")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def k1(self) -> int:
        return self.data.shape[1]

    @property
    def k2(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape[1:]

    def center(self) -> "SampleStack":
        """Subtract the per-cell sample mean (no-op if already centered)."""
        if self.centered:
            return self
        return SampleStack(self.data - self.data.mean(axis=0), centered=True)

    def maybe_center(self, center: bool) -> "SampleStack":
        return self.center() if center else self

    def subset(self, index) -> "SampleStack":
        # A subset of centered data is no longer centered in general.
        return SampleStack(self.data[index])

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class CovTensor4:
    """Dense ``k1 x k2 x k1 x k2`` covariance tensor (oracle scale only)."""

    data: np.ndarray
    cap: int = field(default=ORACLE_CAP, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[:2] != data.shape[2:]:
            raise ValueError(f"expected a (k1, k2, k1, k2) array, got {data.shape}")
        if data.shape[0] * data.shape[1] > self.cap:
            raise OracleCapError(
                f"{data.shape[0]}x{data.shape[1]} grid exceeds the oracle cap of "
                f"{self.cap} points"
            )
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, k1, k2, cap=ORACLE_CAP):
        check_oracle_size(k1, k2, cap)
        return cls(np.zeros((k1, k2, k1, k2)), cap=cap)

    @property
    def k1(self) -> int:
        return self.data.shape[0]

    @property
    def k2(self) -> int:
        return self.data.shape[1]

    def matrix(self) -> np.ndarray:
        """The tensor as a ``(k1*k2) x (k1*k2)`` matrix (row-major cells)."""
        k = self.k1 * self.k2
        return self.data.reshape(k, k)

    def apply(self, x) -> np.ndarray:
        return np.tensordot(self.data, np.asarray(x, dtype=float), axes=2)

    def is_symmetric(self, tol=1e-12) -> bool:
        scale = max(float(np.max(np.abs(self.data))), 1.0)
        return bool(np.max(np.abs(self.data - self.data.transpose(2, 3, 0, 1))) <= tol * scale)

    def fro_norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __add__(self, other):
        return CovTensor4(self.data + other.data, cap=self.cap)

    def __sub__(self, other):
        return CovTensor4(self.data - other.data, cap=self.cap)

    def __mul__(self, c):
        return CovTensor4(float(c) * self.data, cap=self.cap)

    __rmul__ = __mul__


def check_oracle_size(k1, k2, cap=ORACLE_CAP):
    if k1 * k2 > cap:
        raise OracleCapError(f"{k1}x{k2} grid exceeds the oracle cap of {cap} points")


def symmetrize(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return 0.5 * (m + m.T)


def check_bandwidth(d, limit, what="bandwidth"):
    """Validate ``0 <= d <= limit`` and return ``d`` as int."""
    if int(d) != d:
        raise BandwidthError(f"{what} must be an integer, got {d!r}")
    d = int(d)
    if d < 0 or d > limit:
        raise BandwidthError(f"{what} d={d} outside the valid range [0, {limit}]")
    return d


def delta_to_bandwidth(delta: float, k: int) -> int:
    """Discrete bandwidth ``ceil(delta * k) + 1`` for a continuous bandwidth."""
    if not 0.0 <= delta < 1.0:
        raise BandwidthError(f"continuous bandwidth must lie in [0, 1), got {delta}")
    return int(np.ceil(delta * k)) + 1


def strace_matrix(a, d: int) -> float:
    """Shifted trace of a matrix: ``sum_i a[i, i + d]``."""
    return float(np.trace(np.asarray(a), offset=d))


# --------------------------------------------------------------------------
# tracing on single samples and on stacks


def _as_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {x.shape}")
    return x


def spt1_sample(x, d: int) -> np.ndarray:
    """First shifted partial trace of ``x (x) x``: ``sum_j x[i, j] x[k, j + d]``."""
    x = _as_matrix(x)
    k2 = x.shape[1]
    d = check_bandwidth(d, k2)
    return x[:, : k2 - d] @ x[:, d:].T


def spt2_sample(x, d: int) -> np.ndarray:
    """Second shifted partial trace of ``x (x) x``: ``sum_i x[i, j] x[i + d, l]``."""
    x = _as_matrix(x)
    k1 = x.shape[0]
    d = check_bandwidth(d, k1)
    return x[: k1 - d].T @ x[d:]


def strace_sample(x, d: int) -> float:
    x = _as_matrix(x)
    k1, k2 = x.shape
    d = check_bandwidth(d, min(k1, k2))
    return float(np.sum(x[: k1 - d, : k2 - d] * x[d:, d:]))


def _stack_data(samples):
    if isinstance(samples, SampleStack):
        return samples.data
    data = np.asarray(samples, dtype=np.float64)
    return data[None] if data.ndim == 2 else data


def spt1_stack(samples, d: int) -> np.ndarray:
    """Average of :func:`spt1_sample` over the stack, as a single matrix product.

    The samples are laid side by side so that the sum over ``n`` and ``j``
    becomes one ``(k1, n*(k2-d)) @ (n*(k2-d), k1)`` product.
    """
    x = _stack_data(samples)
    n, k1, k2 = x.shape
    d = check_bandwidth(d, k2)
    left = x[:, :, : k2 - d].transpose(1, 0, 2).reshape(k1, -1)
    right = x[:, :, d:].transpose(1, 0, 2).reshape(k1, -1)
    return (left @ right.T) / n


def spt2_stack(samples, d: int) -> np.ndarray:
    x = _stack_data(samples)
    n, k1, k2 = x.shape
    d = check_bandwidth(d, k1)
    top = x[:, : k1 - d, :].reshape(-1, k2)
    bottom = x[:, d:, :].reshape(-1, k2)
    return (top.T @ bottom) / n


def strace_stack(samples, d: int) -> float:
    x = _stack_data(samples)
    n, k1, k2 = x.shape
    d = check_bandwidth(d, min(k1, k2))
    return float(np.sum(x[:, : k1 - d, : k2 - d] * x[:, d:, d:]) / n)


# --------------------------------------------------------------------------
# dense tensors


def spt_tensor(t: CovTensor4, d: int, axis: int) -> np.ndarray:
    """Shifted partial trace of a dense tensor by direct summation."""
    a = t.data
    k1, k2 = a.shape[:2]
    if axis == 1:
        d = check_bandwidth(d, k2)
        j = np.arange(k2 - d)
        # a[:, j, :, j + d] has shape (len(j), k1, k1)
        return a[:, j, :, j + d].sum(axis=0)
    if axis == 2:
        d = check_bandwidth(d, k1)
        i = np.arange(k1 - d)
        return a[i, :, i + d, :].sum(axis=0)
    raise ValueError(f"axis must be 1 or 2, got {axis}")


def strace_tensor(t: CovTensor4, d: int) -> float:
    a = t.data
    k1, k2 = a.shape[:2]
    d = check_bandwidth(d, min(k1, k2))
    i = np.arange(k1 - d)[:, None]
    j = np.arange(k2 - d)[None, :]
    return float(a[i, j, i + d, j + d].sum())


def separable_tensor(a1, a2, cap=ORACLE_CAP) -> CovTensor4:
    """Dense ``T[i, j, k, l] = a1[i, k] * a2[j, l]``."""
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    check_oracle_size(a1.shape[0], a2.shape[0], cap)
    return CovTensor4(np.einsum("ik,jl->ijkl", a1, a2), cap=cap)


def outer_tensor(x, cap=ORACLE_CAP) -> CovTensor4:
    """Dense ``x (x) x`` for a single sample matrix."""
    x = _as_matrix(x)
    check_oracle_size(*x.shape, cap)
    return CovTensor4(np.einsum("ij,kl->ijkl", x, x), cap=cap)


def make_rng(seed, *stream) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and an optional integer stream path."""
    key = np.random.SeedSequence([int(seed), *(int(v) for v in stream)])
    return np.random.Generator(np.random.Philox(key))


def thread_count(threads: int | None = None) -> int:
    """Worker count from the argument, else ``SPTCOV_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get("SPTCOV_THREADS", "1") or 1)
    return max(int(threads), 1)


def parallel_map(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]``, evaluated on a thread pool when ``threads > 1``.

    Results keep the input order, so output does not depend on scheduling.
    """
    items = list(items)
    n = thread_count(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
