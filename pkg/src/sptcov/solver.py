"""Applying and inverting separable-plus-stationary covariances.

The system ``(a1 (x) a2 + B + ridge I) x = y`` is solved by alternating
direction implicit (ADI) iterations.  The separable half-step is a Stein
equation solved in closed form from the factor eigendecompositions; the
stationary half-step is a two-level Toeplitz system solved by conjugate
gradients preconditioned with the optimal two-level circulant approximation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft

from .core import SptError, symmetrize
from .model import BandedTensor, SepPlusBandedCov, apply_separable
from .stationary import StationarySymbol, apply_stationary

__all__ = [
    "EigenPair",
    "AdiConfig",
    "AdiResult",
    "PcgResult",
    "SingularSystemError",
    "NonConvergenceError",
    "sym_eigen",
    "apply_model",
    "stein_solve",
    "optimal_circulant_spectrum",
    "pcg_solve",
    "adi_solve",
]

log = logging.getLogger(__name__)


class SingularSystemError(SptError, ArithmeticError):
    pass


class NonConvergenceError(SptError, RuntimeError):
    pass


class EigenPair(NamedTuple):
    u: np.ndarray
    phi: np.ndarray


def sym_eigen(a) -> EigenPair:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    w, v = np.linalg.eigh(symmetrize(a))
    return EigenPair(v[:, ::-1], w[::-1])


def apply_model(c: SepPlusBandedCov, x) -> np.ndarray:
    """Apply ``a1 (x) a2 + B`` to a matrix (or stack of matrices)."""
    return c.apply(x)


def stein_solve(e1: EigenPair, e2: EigenPair, rho: float, r) -> np.ndarray:
    """Solve ``a1 @ X @ a2 + rho X = R`` from the eigenpairs of ``a1`` and ``a2``.

    In the eigenbases the operator is diagonal with entries
    ``phi_i psi_j + rho``, so ``X = U [(U^T R V) / (phi psi^T + rho)] V^T``.
    """
    h = np.outer(e1.phi, e2.phi) + rho
    if h.min() <= 1e-14 * h.max() or h.max() <= 0:
        raise SingularSystemError(f"shifted separable operator is singular (min entry {h.min():.3e})")
    return e1.u @ ((e1.u.T @ np.asarray(r, dtype=np.float64) @ e2.u) / h) @ e2.u.T


def optimal_circulant_spectrum(sym: StationarySymbol) -> np.ndarray:
    """Eigenvalues of the Frobenius-optimal two-level circulant approximation.

    Per level the optimal circulant of a Toeplitz matrix with entries ``t_h``
    has generator ``c_h = ((k - h) t_h + h t_{h - k}) / k``; the two-level
    version is the tensor product of the two weightings.
    """
    k1, k2 = sym.shape
    sp = np.pad(sym.s, ((1, 0), (1, 0)))
    h = np.arange(k1)[:, None]
    l = np.arange(k2)[None, :]
    c = (
        (k1 - h) * (k2 - l) * sp[h + k1, l + k2]
        + h * (k2 - l) * sp[h, l + k2]
        + (k1 - h) * l * sp[h + k1, l]
        + h * l * sp[h, l]
    ) / (k1 * k2)
    return sfft.fft2(c).real


class PcgResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def _pcg(matvec, precond, y, tol, max_iter, x0=None) -> PcgResult:
    y = np.asarray(y, dtype=np.float64)
    ynorm = np.linalg.norm(y)
    if ynorm == 0:
        return PcgResult(np.zeros_like(y), 0, 0.0, True)
    x = np.zeros_like(y) if x0 is None else np.array(x0, dtype=np.float64)
    r = y - matvec(x) if x0 is not None else y.copy()
    rel = np.linalg.norm(r) / ynorm
    if rel <= tol:
        return PcgResult(x, 0, rel, True)
    z = precond(r)
    p = z.copy()
    rz = np.sum(r * z)
    for it in range(1, max_iter + 1):
        ap = matvec(p)
        alpha = rz / np.sum(p * ap)
        x += alpha * p
        r -= alpha * ap
        rel = np.linalg.norm(r) / ynorm
        if rel <= tol:
            return PcgResult(x, it, rel, True)
        z = precond(r)
        rz_new = np.sum(r * z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return PcgResult(x, max_iter, rel, False)


def pcg_solve(sym: StationarySymbol, rho: float, y, tol: float = 1e-10, max_iter: int = 500, x0=None) -> PcgResult:
    """Solve ``(B + rho I) x = y`` for a stationary ``B`` by preconditioned CG.

    The preconditioner is the optimal two-level circulant approximation of
    ``B`` plus ``rho I``, inverted by a diagonal solve in Fourier space.
    Returns a result with ``converged=False`` if ``max_iter`` is reached.
    """
    lam = optimal_circulant_spectrum(sym)
    scale = max(float(np.abs(lam).max()), abs(rho), 1e-300)
    inv = 1.0 / np.maximum(lam + rho, 1e-12 * scale)

    def precond(r):
        return sfft.ifft2(sfft.fft2(r) * inv).real

    def matvec(v):
        return apply_stationary(sym, v) + rho * v

    return _pcg(matvec, precond, y, tol, max_iter, x0)


@dataclass
class AdiConfig:
    """Settings for :func:`adi_solve`.

    ``tol`` is the target relative accuracy of the solution.  ``method``
    selects ``"gmres"`` (ADI sweeps as a preconditioner for flexible GMRES,
    the default) or ``"stationary"`` (the plain ADI fixed-point iteration).
    ``shift_ratio`` is the spacing of the geometric shift ladder used per
    preconditioner sweep; ``eps=None`` means ``eps = tol``.
    """

    tol: float = 1e-6
    max_outer: int = 200
    ridge: float = 1e-5
    eps: float | None = None
    pcg_tol: float = 1e-10
    pcg_max: int = 500
    method: str = "gmres"
    shift_ratio: float = 2.0

    def __post_init__(self):
        for name in ("tol", "max_outer", "pcg_tol", "pcg_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.ridge < 0 or (self.eps is not None and self.eps <= 0):
            raise ValueError("ridge must be non-negative and eps positive")
        if self.method not in ("gmres", "stationary"):
            raise ValueError(f"method must be 'gmres' or 'stationary', got {self.method!r}")
        if self.shift_ratio <= 1:
            raise ValueError("shift_ratio must exceed 1")


@dataclass
class AdiResult:
    x: np.ndarray
    outer_iters: int
    converged: bool
    history: list = field(default_factory=list)
    pcg_iters: list = field(default_factory=list)
    rho0: float = float("nan")
    shifts: np.ndarray | None = None
    residual: float = float("nan")

    @property
    def mean_pcg_iters(self) -> float:
        """Average inner iterations per PCG call."""
        return float(np.mean(self.pcg_iters)) if self.pcg_iters else 0.0


# floor for the residual target; below this rounding dominates
_RES_FLOOR = 64 * np.finfo(np.float64).eps


def _fgmres(matvec, precond, b, rtol, max_iter, callback):
    """Right-preconditioned flexible GMRES without restarts.

    ``precond`` may change between calls (inexact inner solves), so the
    preconditioned directions are stored alongside the Arnoldi basis.
    """
    shape = b.shape
    b = b.ravel()
    n = b.size
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0:
        return x.reshape(shape), 0, True
    m = max_iter
    v = np.zeros((m + 1, n))
    z = np.zeros((m, n))
    h = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = bnorm
    v[0] = b / bnorm
    j = -1
    for j in range(m):
        z[j] = precond(v[j].reshape(shape)).ravel()
        w = matvec(z[j].reshape(shape)).ravel()
        # classical Gram-Schmidt, applied twice for stability
        coef = v[: j + 1] @ w
        w -= coef @ v[: j + 1]
        extra = v[: j + 1] @ w
        w -= extra @ v[: j + 1]
        h[: j + 1, j] = coef + extra
        h[j + 1, j] = np.linalg.norm(w)
        if h[j + 1, j] > 0:
            v[j + 1] = w / h[j + 1, j]
        for i in range(j):
            t = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
            h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
            h[i, j] = t
        r = np.hypot(h[j, j], h[j + 1, j])
        cs[j], sn[j] = h[j, j] / r, h[j + 1, j] / r
        h[j, j] = r
        h[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        est = abs(g[j + 1]) / bnorm
        callback(j + 1, est)
        if est <= rtol or r == 0:
            break
    k = j + 1
    coef = np.linalg.solve(np.triu(h[:k, :k]), g[:k])
    x = coef @ z[:k]
    res = np.linalg.norm(b - matvec(x.reshape(shape)).ravel()) / bnorm
    return x.reshape(shape), k, res <= rtol


def adi_solve(c: SepPlusBandedCov, y, cfg: AdiConfig | None = None) -> AdiResult:
    """Solve ``(a1 (x) a2 + B + ridge I) x = y``.

    ``B`` must be stationary, diagonal (band storage with ``d = 1``) or absent.

    The two half-steps of one ADI sweep with shift ``rho`` are

        (A + rho I) x_half = r - B x + rho x        (Stein equation)
        (B + rho I) x_new  = r - A x_half + rho x_half  (PCG)

    With ``method="stationary"`` these are iterated from ``x = 0`` with
    ``rho_0 = sqrt(max(alpha_max alpha_min, beta_max beta_min)) + eps`` and
    ``rho_k = min(rho_{k-1}, ||x_{k+1} - x_k|| / ||x_k||)``; the loop stops
    once the relative change or the relative residual drops below ``tol``.

    With ``method="gmres"`` one preconditioner application runs the sweeps
    from ``x = 0`` over a non-increasing geometric ladder of shifts spanning
    the spectral bounds of ``A`` and ``B``, and flexible GMRES accelerates
    the outer iteration.  It stops once the relative residual guarantees a
    relative error below ``tol`` through the condition bound
    ``(alpha_max + beta_max) / (alpha_min + beta_min)``.
    """
    cfg = cfg or AdiConfig()
    y = np.asarray(y, dtype=np.float64)
    e1, e2 = sym_eigen(c.a1), sym_eigen(c.a2)
    ynorm = np.linalg.norm(y)
    eps = cfg.tol if cfg.eps is None else cfg.eps

    def apply_a(v):
        return apply_separable(c.a1, c.a2, v)

    if c.banded is None:
        x = stein_solve(e1, e2, cfg.ridge, y)
        res = np.linalg.norm(apply_a(x) + cfg.ridge * x - y) / max(ynorm, 1e-300)
        hist = [{"iter": 1, "change": 0.0, "residual": res, "rho": cfg.ridge}]
        return AdiResult(x, 1, True, hist, [0], rho0=cfg.ridge, residual=res)

    if isinstance(c.banded, StationarySymbol):
        k1, k2 = c.banded.shape
        sym = c.banded + StationarySymbol.delta(k1, k2, cfg.ridge)
        spec = sym.spectrum
        beta_max, beta_min = spec.max, max(spec.min, 0.0)

        def apply_b(v):
            return apply_stationary(sym, v)

        def solve_b(rho, rhs, x0):
            out = pcg_solve(sym, rho, rhs, tol=cfg.pcg_tol, max_iter=cfg.pcg_max, x0=x0)
            if not out.converged:
                log.warning("inner PCG stopped at residual %.3e", out.residual)
            return out.x, out.iterations

    elif isinstance(c.banded, BandedTensor) and c.banded.d == 1:
        vmap = c.banded.variance_map() + cfg.ridge
        beta_max, beta_min = float(vmap.max()), max(float(vmap.min()), 0.0)

        def apply_b(v):
            return vmap * v

        def solve_b(rho, rhs, x0):
            return rhs / (vmap + rho), 0

    else:
        raise ValueError("inverse solves need a stationary or diagonal (d=1) banded part")

    prods = np.outer(e1.phi, e2.phi)
    alpha_max, alpha_min = float(prods.max()), max(float(prods.min()), 0.0)
    rho0 = float(np.sqrt(max(alpha_max * alpha_min, beta_max * beta_min))) + eps
    result = AdiResult(np.zeros_like(y), 0, False, rho0=rho0)
    if ynorm == 0:
        result.converged = True
        result.residual = 0.0
        return result

    def sweep(rho, rhs, x):
        x_half = stein_solve(e1, e2, rho, rhs - apply_b(x) + rho * x)
        x_new, inner = solve_b(rho, rhs - apply_a(x_half) + rho * x_half, x_half)
        result.pcg_iters.append(inner)
        return x_new

    def residual_of(x):
        return float(np.linalg.norm(apply_a(x) + apply_b(x) - y) / ynorm)

    if cfg.method == "stationary":
        rho = rho0
        x = np.zeros_like(y)
        for it in range(1, cfg.max_outer + 1):
            x_new = sweep(rho, y, x)
            xnorm = np.linalg.norm(x)
            change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x_new), 1e-300)
            residual = residual_of(x_new)
            result.history.append({"iter": it, "change": change, "residual": residual, "rho": rho})
            if xnorm > 0:
                rho = min(rho, float(np.linalg.norm(x_new - x) / xnorm))
            x = x_new
            if change <= cfg.tol or residual <= cfg.tol:
                result.converged = True
                break
    else:
        lam_hi = alpha_max + beta_max
        lam_lo = max(alpha_min + beta_min, eps)
        n_shifts = int(np.ceil(np.log(max(lam_hi, lam_lo) / lam_lo) / np.log(cfg.shift_ratio))) + 1
        shifts = np.geomspace(max(alpha_max, beta_max, lam_lo), lam_lo, n_shifts)
        result.shifts = shifts
        rtol = max(cfg.tol * lam_lo / lam_hi, _RES_FLOOR)

        def precond(r):
            x = np.zeros_like(r)
            for rho in shifts:
                x = sweep(rho, r, x)
            return x

        def record(it, est):
            result.history.append({"iter": it, "residual": est, "rho": float(shifts[-1])})

        x, _, _ = _fgmres(lambda v: apply_a(v) + apply_b(v), precond, y, rtol, cfg.max_outer, record)
        result.converged = bool(residual_of(x) <= rtol)

    result.x = x
    result.outer_iters = len(result.history)
    result.residual = residual_of(x)
    if not result.converged:
        log.warning("ADI did not converge in %d outer iterations", result.outer_iters)
    return result
