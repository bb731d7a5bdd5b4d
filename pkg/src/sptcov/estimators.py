"""Separable-plus-banded covariance estimation and the baseline estimators."""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .core import (
    CovTensor4,
    DegenerateTraceError,
    SampleStack,
    check_bandwidth,
    check_oracle_size,
    separable_tensor,
    spt1_stack,
    spt2_stack,
    spt_tensor,
    strace_stack,
    strace_tensor,
    symmetrize,
)
from .model import BandedTensor, EmpiricalCov, SepPlusBandedCov, shift_diagonals
from .norms import contract_first, contract_second, expand_terms, structured_fro_norm2, term_shape
from .stationary import (
    StationarySymbol,
    psd_project_symbol,
    topavg_separable,
    topavg_stack,
    topavg_tensor,
)

__all__ = [
    "BANDED_KINDS",
    "estimate_separable",
    "estimate_full",
    "estimate_banded",
    "estimate_from_tensor",
    "baseline_pt",
    "baseline_nkp",
    "NkpResult",
    "empirical_cov",
    "psd_project_matrix",
    "rel_error",
]

BANDED_KINDS = ("stationary", "banded", "none")

# |shifted trace| below this fraction of the total variance counts as zero.
DEGENERATE_RTOL = 1e-12


def _as_stack(samples) -> SampleStack:
    return samples if isinstance(samples, SampleStack) else SampleStack(samples)


def psd_project_matrix(a) -> np.ndarray:
    """Nearest PSD matrix after a global sign flip when the trace is negative."""
    a = symmetrize(a)
    if np.trace(a) < 0:
        a = -a
    w, v = np.linalg.eigh(a)
    if w.min() >= 0:
        return a
    return symmetrize((v * np.maximum(w, 0.0)) @ v.T)


def _finish_factors(a1, a2, psd):
    a1, a2 = symmetrize(a1), symmetrize(a2)
    if psd:
        # a joint flip keeps the product unchanged
        if np.trace(a1) < 0:
            a1, a2 = -a1, -a2
        a1, a2 = psd_project_matrix(a1), psd_project_matrix(a2)
    return a1, a2


def _check_trace(tr, scale, d):
    if not np.isfinite(tr) or abs(tr) <= DEGENERATE_RTOL * scale or scale == 0.0:
        raise DegenerateTraceError(d, tr)


def estimate_separable(samples, d: int, psd: bool = True, center: bool = True):
    """Separable factors ``(a1, a2)`` from shifted partial traces at bandwidth ``d``.

    ``a1 = Tr1^d(C_N)`` and ``a2 = Tr2^d(C_N) / Tr^d(C_N)``, both symmetrised.
    With ``psd=True`` a joint sign flip followed by eigenvalue clipping makes
    both factors positive semi-definite.

    Raises
    ------
    DegenerateTraceError
        If the shifted trace of the empirical covariance is numerically zero.
    """
    stack = _as_stack(samples).maybe_center(center)
    d = check_bandwidth(d, min(stack.k1, stack.k2))
    tr = strace_stack(stack, d)
    _check_trace(tr, strace_stack(stack, 0), d)
    a1 = spt1_stack(stack, d)
    a2 = spt2_stack(stack, d) / tr
    return _finish_factors(a1, a2, psd)


def estimate_banded(samples, a1, a2, d: int) -> BandedTensor:
    """Band-limited residual ``C_N - a1 (x) a2`` on lags ``max(|p|, |q|) < d``.

    ``samples`` are used as given (centre beforehand).  Costs ``O(N K^2 d^2)``.
    """
    x = _as_stack(samples).data
    n, k1, k2 = x.shape
    if d < 1:
        raise ValueError("band storage needs d >= 1")
    pad = d - 1
    xp = np.pad(x, [(0, 0), (pad, pad), (pad, pad)])
    d1 = shift_diagonals(a1, d)
    d2 = shift_diagonals(a2, d)
    b = np.empty((k1, k2, 2 * d - 1, 2 * d - 1))
    for p in range(2 * d - 1):
        for q in range(2 * d - 1):
            moment = np.einsum("nij,nij->ij", x, xp[:, p : p + k1, q : q + k2]) / n
            b[:, :, p, q] = moment - np.outer(d1[:, p], d2[:, q])
    return BandedTensor(b)


def estimate_full(
    samples,
    d: int,
    banded_kind: str = "stationary",
    psd: bool = True,
    center: bool = True,
    divisor: str = "grid",
) -> SepPlusBandedCov:
    """Separable-plus-banded estimate at bandwidth ``d``.

    Parameters
    ----------
    samples : SampleStack or array_like, shape (n, k1, k2)
    d : int
        Discrete bandwidth; the banded part is confined to lags
        ``max(|h|, |l|) < d``.
    banded_kind : {"stationary", "banded", "none"}
        ``"stationary"`` Toeplitz-averages the residual (then projects it onto
        PSD symbols when ``psd``); ``"banded"`` keeps the non-stationary band
        of the residual; ``"none"`` drops it.
    psd : bool
        Project the factors (and a stationary symbol) onto PSD operators.
    center : bool
        Subtract the per-cell sample mean first.
    divisor : {"grid", "count"}
        Toeplitz-averaging divisor, ``k1 k2`` or the per-lag number of terms.
    """
    if banded_kind not in BANDED_KINDS:
        raise ValueError(f"banded_kind must be one of {BANDED_KINDS}, got {banded_kind!r}")
    stack = _as_stack(samples).maybe_center(center)
    a1, a2 = estimate_separable(stack, d, psd=psd, center=False)
    banded = None
    if banded_kind == "stationary" and d > 0:
        banded = topavg_stack(stack, a1, a2, d=d, divisor=divisor)
        if psd:
            banded = psd_project_symbol(banded)
    elif banded_kind == "banded" and d > 0:
        banded = estimate_banded(stack, a1, a2, d)
    return SepPlusBandedCov(a1, a2, banded, d, meta={"n": stack.n, "psd": psd})


def estimate_from_tensor(
    t: CovTensor4, d: int, banded_kind: str = "stationary", psd: bool = False, divisor: str = "grid"
) -> SepPlusBandedCov:
    """The estimation pipeline applied to a dense covariance (population level)."""
    d = check_bandwidth(d, min(t.k1, t.k2))
    tr = strace_tensor(t, d)
    _check_trace(tr, strace_tensor(t, 0), d)
    a1, a2 = _finish_factors(spt_tensor(t, d, 1), spt_tensor(t, d, 2) / tr, psd)
    banded = None
    if d > 0 and banded_kind != "none":
        resid = t - separable_tensor(a1, a2, cap=t.cap)
        if banded_kind == "stationary":
            banded = topavg_tensor(resid, divisor=divisor).clip(d)
            if psd:
                banded = psd_project_symbol(banded)
        else:
            banded = BandedTensor.from_tensor(resid, d)
    return SepPlusBandedCov(a1, a2, banded, d)


def baseline_pt(samples, psd: bool = True, center: bool = True):
    """Plain partial tracing, i.e. the separable estimator at ``d = 0``."""
    return estimate_separable(samples, 0, psd=psd, center=center)


def empirical_cov(samples, center: bool = True, dense: bool = True):
    """Empirical covariance ``(1/N) sum x_n (x) x_n``.

    ``dense=True`` builds the full tensor (oracle scale only); otherwise the
    samples are wrapped in an :class:`EmpiricalCov` that supports norms and
    application without forming the tensor.
    """
    stack = _as_stack(samples).maybe_center(center)
    emp = EmpiricalCov(stack)
    return emp.to_tensor() if dense else emp


class NkpResult(NamedTuple):
    a1: np.ndarray
    a2: np.ndarray
    iterations: int
    converged: bool


def baseline_nkp(samples_or_cov, iters: int = 100, tol: float = 1e-10, center: bool = True) -> NkpResult:
    """Nearest Kronecker product by alternating least squares.

    Each half-step solves the least-squares problem for one factor exactly,
    ``a1 <- sym(contract(C, a2)) / ||a2||^2`` and symmetrically for ``a2``,
    which is power iteration on the rearranged covariance without forming it.
    ``samples_or_cov`` is a sample stack or any structured operator accepted
    by :func:`sptcov.norms.expand_terms` (used for the bias of separable fits).
    """
    if isinstance(samples_or_cov, (SampleStack, np.ndarray)):
        cov = EmpiricalCov(_as_stack(samples_or_cov).maybe_center(center))
    else:
        cov = samples_or_cov
    terms = expand_terms(cov)
    k2 = term_shape(terms[0][1])[1]
    a2 = np.eye(k2)
    a1 = None
    prev = None
    for it in range(1, iters + 1):
        a1 = symmetrize(contract_second(terms, a2)) / np.sum(a2 * a2)
        a2 = symmetrize(contract_first(terms, a1)) / np.sum(a1 * a1)
        if prev is not None:
            change2 = structured_fro_norm2([(a1, a2), (-1.0, prev)])
            size2 = structured_fro_norm2([(a1, a2)])
            if change2 <= tol**2 * size2:
                return NkpResult(a1, a2, it, True)
        prev = (a1, a2)
    warnings.warn(f"nearest Kronecker product did not converge in {iters} iterations", RuntimeWarning)
    return NkpResult(a1, a2, iters, False)


def rel_error(est, truth) -> float:
    """Relative Frobenius error ``||est - truth|| / ||truth||`` of structured operators."""
    den = structured_fro_norm2(truth)
    if den == 0.0:
        raise ValueError("truth has zero norm")
    num = structured_fro_norm2(expand_terms(est) + [(-c, a) for c, a in expand_terms(truth)])
    return float(np.sqrt(num / den))
