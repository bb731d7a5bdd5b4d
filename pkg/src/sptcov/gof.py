"""Bootstrap goodness-of-fit test for the separable-plus-banded model.

The discrepancy ``D_N = C_N - (A1 (x) A2 + B)`` between the empirical
covariance and the fitted model is measured on the subspace spanned by
``e_i f_j^T``, where ``e_i`` and ``f_j`` are the leading eigenvectors of the
fitted factors.  The null distribution of that projected norm is
approximated by resampling the observations with replacement and measuring
``D_N - D_N*`` on the same (fixed) subspace.  With ``d = 0`` this is the
usual bootstrap test of separability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import DegenerateTraceError, SampleStack, SptError, make_rng, parallel_map
from .estimators import BANDED_KINDS, estimate_full
from .model import SepPlusBandedCov
from .solver import sym_eigen
from .stationary import StationarySymbol, apply_stationary

__all__ = [
    "GofConfig",
    "GofResult",
    "RankError",
    "gof_subspace",
    "projected_discrepancy",
    "gof_statistic",
    "gof_test",
]

# Eigenvalues below this fraction of the largest count as zero.
RANK_RTOL = 1e-12


class RankError(SptError, ValueError):
    """Requested more marginal eigenvectors than the fit has non-zero eigenvalues."""


@dataclass
class GofConfig:
    """Test settings; ``i_dims`` and ``j_dims`` are the subspace ranks I and J."""

    d: int = 0
    i_dims: int = 2
    j_dims: int = 2
    n_boot: int = 1000
    seed: int = 0
    banded_kind: str = "stationary"
    psd: bool = True
    center: bool = True
    recompute_subspace: bool = False

    def __post_init__(self):
        if self.i_dims < 1 or self.j_dims < 1:
            raise ValueError("subspace ranks must be positive")
        if self.n_boot < 1:
            raise ValueError("n_boot must be at least 1")
        if self.banded_kind not in BANDED_KINDS:
            raise ValueError(f"banded_kind must be one of {BANDED_KINDS}")


class GofResult(NamedTuple):
    p_value: float
    statistic: float
    boot_draws: np.ndarray
    redraws: int = 0


def _as_stack(samples):
    return samples if isinstance(samples, SampleStack) else SampleStack(samples)


def gof_subspace(fit: SepPlusBandedCov, i_dims: int, j_dims: int):
    """Leading eigenvectors ``(E, F)`` of the fitted factors, as columns."""
    out = []
    for a, m, name in ((fit.a1, i_dims, "I"), (fit.a2, j_dims, "J")):
        if m > a.shape[0]:
            raise RankError(f"{name}={m} exceeds the grid size {a.shape[0]}")
        e = sym_eigen(a)
        scale = np.abs(e.phi).max()
        nonzero = int(np.sum(np.abs(e.phi) > RANK_RTOL * scale)) if scale > 0 else 0
        if m > nonzero:
            raise RankError(f"{name}={m} exceeds the {nonzero} non-zero eigenpairs of the fitted factor")
        out.append(e.u[:, :m])
    return tuple(out)


def _model_quadratic(fit: SepPlusBandedCov, e, f):
    """``<u_ij, C u_ij>`` for ``u_ij = e_i f_j^T`` under the fitted model."""
    sep = np.outer(np.einsum("ki,kl,li->i", e, fit.a1, e), np.einsum("ki,kl,li->i", f, fit.a2, f))
    if fit.banded is None:
        return sep
    u = e.T[:, None, :, None] * f.T[None, :, None, :]  # (I, J, k1, k2)
    if isinstance(fit.banded, StationarySymbol):
        bu = apply_stationary(fit.banded, u)
    else:
        bu = fit.banded.apply(u)
    return sep + np.sum(u * bu, axis=(-2, -1))


def projected_discrepancy(stack: SampleStack, fit: SepPlusBandedCov, e, f) -> np.ndarray:
    """``<u_ij, D_N u_ij>`` with ``D_N`` the empirical covariance minus the fit.

    ``stack`` is used as given (centre it first).
    """
    proj = np.einsum("ki,nkl,lj->nij", e, stack.data, f)
    return np.mean(proj**2, axis=0) - _model_quadratic(fit, e, f)


def _fit(stack, cfg):
    return estimate_full(stack, cfg.d, banded_kind=cfg.banded_kind, psd=cfg.psd, center=False)


def gof_statistic(samples, fit: SepPlusBandedCov, cfg: GofConfig) -> float:
    """Squared norm of the discrepancy projected onto the leading subspace."""
    stack = _as_stack(samples).maybe_center(cfg.center)
    e, f = gof_subspace(fit, cfg.i_dims, cfg.j_dims)
    return float(np.sum(projected_discrepancy(stack, fit, e, f) ** 2))


def gof_test(samples, cfg: GofConfig, threads: int | None = None) -> GofResult:
    """Empirical bootstrap p-value for the model at bandwidth ``cfg.d``.

    The p-value is ``(1 + #{T*_b >= T}) / (n_boot + 1)``, which lies in
    ``[1 / (n_boot + 1), 1]``.  Draws hitting a degenerate shifted trace are
    redrawn from a fresh substream; more than ``10 * n_boot`` redraws in
    total raise :class:`DegenerateTraceError`.
    """
    stack = _as_stack(samples).maybe_center(cfg.center)
    fit = _fit(stack, cfg)
    e, f = gof_subspace(fit, cfg.i_dims, cfg.j_dims)
    dn = projected_discrepancy(stack, fit, e, f)
    stat = float(np.sum(dn**2))
    cap = 10 * cfg.n_boot

    def draw(b):
        for attempt in range(cap + 1):
            idx = make_rng(cfg.seed, b, attempt).integers(0, stack.n, stack.n)
            boot = stack.subset(idx).maybe_center(cfg.center)
            try:
                bfit = _fit(boot, cfg)
                be, bf = gof_subspace(bfit, cfg.i_dims, cfg.j_dims) if cfg.recompute_subspace else (e, f)
            except (DegenerateTraceError, RankError):
                continue
            if cfg.recompute_subspace:
                ref = projected_discrepancy(stack, fit, be, bf)
            else:
                ref = dn
            return float(np.sum((ref - projected_discrepancy(boot, bfit, be, bf)) ** 2)), attempt
        return float("nan"), cap + 1

    results = parallel_map(draw, range(cfg.n_boot), threads)
    redraws = sum(r[1] for r in results)
    if redraws > cap:
        raise DegenerateTraceError(cfg.d, 0.0)
    boot = np.array([r[0] for r in results])
    p = (1.0 + np.sum(boot >= stat)) / (cfg.n_boot + 1.0)
    return GofResult(float(p), stat, boot, redraws)
