"""Data-generating processes for the simulation study.

Samples are ``X = sqrt(tau) Y + W (+ E)`` where ``Y`` is matrix normal with
separable covariance, ``W`` is a space-time moving average of white noise
(stationary and banded) and ``E`` optional heteroscedastic white noise.
Randomness comes from the counter-based Philox generator; streams for
replicates are derived from ``(seed, cell, rep)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy import signal

from .core import SampleStack, make_rng, parallel_map
from .model import BandedTensor, SepPlusBandedCov
from .solver import sym_eigen
from .stationary import StationarySymbol, symbol_fro_norm

__all__ = [
    "SimConfig",
    "MaFilter",
    "make_rng",
    "legendre_cov",
    "wiener_cov",
    "ma_filter",
    "ma_symbol",
    "ma_scale",
    "sample_matrix_normal",
    "sample_ma",
    "noise_variance_map",
    "separable_factor",
    "simulate",
    "METHODS",
    "ExperimentConfig",
    "default_candidates",
    "bias_error",
    "error_experiment",
]

RNG_NAME = "philox"


@dataclass
class SimConfig:
    """Simulation settings.

    ``d_true = 2p + 1`` is the moving-average window (0 disables the banded
    component).  ``noise_sigma2`` is the largest per-cell variance of the
    white measurement noise; ``noise_profile`` is ``"constant"`` or ``"ramp"``
    (variance rising linearly along the second axis from half the maximum).
    """

    k: int = 50
    n: int = 300
    tau: float = 3.0
    d_true: int = 9
    sep_kind: str = "legendre"
    filter_kind: str = "signed"
    noise_sigma2: float = 0.0
    noise_profile: str = "constant"
    seed: int = 0
    rank: int = 7

    def __post_init__(self):
        if self.d_true < 0 or (self.d_true > 0 and self.d_true % 2 == 0):
            raise ValueError(f"d_true must be 0 or odd, got {self.d_true}")
        if self.k < max(self.d_true, 1):
            raise ValueError("grid size must be at least the moving-average window")
        if self.sep_kind == "legendre" and not 1 <= self.rank <= self.k:
            raise ValueError(f"rank must lie in 1..k, got {self.rank}")
        if self.tau < 0 or self.noise_sigma2 < 0:
            raise ValueError("tau and noise_sigma2 must be non-negative")
        if self.sep_kind not in ("legendre", "wiener"):
            raise ValueError(f"unknown sep_kind {self.sep_kind!r}")
        if self.filter_kind not in ("signed", "epanechnikov"):
            raise ValueError(f"unknown filter_kind {self.filter_kind!r}")
        if self.noise_profile not in ("constant", "ramp"):
            raise ValueError(f"unknown noise_profile {self.noise_profile!r}")

    @property
    def p(self) -> int:
        return (self.d_true - 1) // 2

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rng"] = RNG_NAME
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        rng = data.pop("rng", RNG_NAME)
        if rng != RNG_NAME:
            raise ValueError(f"unsupported RNG {rng!r}; only {RNG_NAME!r} is reproducible here")
        return cls(**data)


def _normalize(a):
    return a / np.linalg.norm(a)


def legendre_cov(k: int, rank: int = 7) -> np.ndarray:
    """Rank-``rank`` covariance with shifted-Legendre eigenvectors, unit Frobenius norm.

    Eigenvalues decay linearly, ``(rank + 1 - j) / rank``; eigenvectors are
    the shifted Legendre polynomials at the cell midpoints, orthonormalised
    on the grid so the construction is an exact eigendecomposition.
    """
    if rank > k:
        raise ValueError("rank cannot exceed the grid size")
    t = (np.arange(1, k + 1) - 0.5) / k
    basis = npleg.legvander(2.0 * t - 1.0, rank - 1)
    q, r = np.linalg.qr(basis)
    q = q * np.sign(np.diag(r))
    lam = (rank + 1 - np.arange(1, rank + 1)) / rank
    return _normalize((q * lam) @ q.T)


def wiener_cov(k: int) -> np.ndarray:
    """Brownian-motion covariance ``min(t_i, t_j)`` at ``t_i = i / k``, unit Frobenius norm."""
    t = np.arange(1, k + 1) / k
    return _normalize(np.minimum.outer(t, t))


def separable_factor(kind: str, k: int, rank: int = 7) -> np.ndarray:
    return legendre_cov(k, rank) if kind == "legendre" else wiener_cov(k)


@dataclass(frozen=True)
class MaFilter:
    """Moving-average coefficients ``q[a + p, b + p]`` for offsets ``|a|, |b| <= p``."""

    q: np.ndarray

    @property
    def p(self) -> int:
        return (self.q.shape[0] - 1) // 2

    @property
    def window(self) -> int:
        return self.q.shape[0]


def ma_filter(kind: str, p: int) -> MaFilter:
    off = np.arange(-p, p + 1)
    if kind == "signed":
        q = (-1.0) ** np.abs(off[:, None] - off[None, :])
    elif kind == "epanechnikov":
        w = 1.0 - np.abs(off) / (p + 1)
        q = (9.0 / 16.0) * np.outer(w, w)
    else:
        raise ValueError(f"unknown filter kind {kind!r}")
    return MaFilter(q)


def _raw_symbol(f: MaFilter, k1, k2):
    # autocorrelation of the filter: s(h, l) = sum_{a, b} q(a, b) q(a - h, b - l)
    full = signal.correlate2d(f.q, f.q, mode="full")  # centred at lag (0, 0)
    w = f.window
    s = np.zeros((2 * k1 - 1, 2 * k2 - 1))
    r1 = min(w - 1, k1 - 1)
    r2 = min(w - 1, k2 - 1)
    s[k1 - 1 - r1 : k1 + r1, k2 - 1 - r2 : k2 + r2] = full[w - 1 - r1 : w + r1, w - 1 - r2 : w + r2]
    return s


def ma_scale(f: MaFilter, k1: int, k2: int) -> float:
    """Multiplier of the filter output giving a unit-norm banded covariance."""
    return 1.0 / math.sqrt(symbol_fro_norm(StationarySymbol(_raw_symbol(f, k1, k2))))


def ma_symbol(f: MaFilter, k1: int, k2: int) -> StationarySymbol:
    """Covariance symbol of the normalised moving average, band ``2p + 1``."""
    s = _raw_symbol(f, k1, k2) * ma_scale(f, k1, k2) ** 2
    return StationarySymbol(s, band=min(f.window, max(k1, k2)))


def sample_matrix_normal(a1, a2, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw ``L1 Z L2^T`` with symmetric square roots ``L`` of ``a1`` and ``a2``."""
    roots = []
    for a in (a1, a2):
        e = sym_eigen(a)
        roots.append((e.u * np.sqrt(np.maximum(e.phi, 0.0))) @ e.u.T)
    k1, k2 = roots[0].shape[0], roots[1].shape[0]
    shape = (k1, k2) if n is None else (n, k1, k2)
    z = rng.standard_normal(shape)
    return roots[0] @ z @ roots[1].T


def sample_ma(f: MaFilter, k1: int, k2: int, norm_const: float, rng: np.random.Generator, n: int | None = None):
    """``W[i, j] = c * sum_{a, b} q(a, b) eps[i + a, j + b]`` over an extended noise field."""
    p = f.p
    shape = (k1 + 2 * p, k2 + 2 * p) if n is None else (n, k1 + 2 * p, k2 + 2 * p)
    eps = rng.standard_normal(shape)
    q = f.q if n is None else f.q[None]
    w = signal.fftconvolve(eps, q[..., ::-1, ::-1], mode="valid", axes=(-2, -1))
    return norm_const * w


def noise_variance_map(k1: int, k2: int, sigma2: float, profile: str = "constant") -> np.ndarray:
    if profile == "constant":
        return np.full((k1, k2), float(sigma2))
    ramp = 0.5 + 0.5 * np.arange(k2) / max(k2 - 1, 1)
    return np.broadcast_to(sigma2 * ramp, (k1, k2)).copy()


def _truth(cfg: SimConfig, a1, a2, sym):
    a1 = cfg.tau * a1
    vmap = None
    if cfg.noise_sigma2 > 0:
        vmap = noise_variance_map(cfg.k, cfg.k, cfg.noise_sigma2, cfg.noise_profile)
    if vmap is None:
        banded = sym
    elif cfg.noise_profile == "constant":
        noise = StationarySymbol.delta(cfg.k, cfg.k, cfg.noise_sigma2)
        banded = noise if sym is None else sym + noise
    else:
        d = max(cfg.d_true, 1)
        b = BandedTensor.from_symbol(sym, d).b.copy() if sym is not None else np.zeros((cfg.k, cfg.k, 1, 1))
        b[:, :, d - 1, d - 1] += vmap
        banded = BandedTensor(b)
    return SepPlusBandedCov(a1, a2, banded, d=max(cfg.d_true, 1 if vmap is not None else 0))


def simulate(cfg: SimConfig, rep: int = 0, cell: int = 0):
    """Draw a sample stack and the covariance it was drawn from.

    Returns ``(stack, truth)``; ``truth`` is ``tau a1 (x) a2`` plus the
    moving-average symbol and the noise variance (stationary when the
    noise is homoscedastic, band storage otherwise).
    """
    rng = make_rng(cfg.seed, cell, rep)
    k, n = cfg.k, cfg.n
    a = separable_factor(cfg.sep_kind, k, cfg.rank)
    x = math.sqrt(cfg.tau) * sample_matrix_normal(a, a, rng, n) if cfg.tau > 0 else np.zeros((n, k, k))
    sym = None
    if cfg.d_true > 0:
        f = ma_filter(cfg.filter_kind, cfg.p)
        x = x + sample_ma(f, k, k, ma_scale(f, k, k), rng, n)
        sym = ma_symbol(f, k, k)
    if cfg.noise_sigma2 > 0:
        vmap = noise_variance_map(k, k, cfg.noise_sigma2, cfg.noise_profile)
        x = x + np.sqrt(vmap) * rng.standard_normal((n, k, k))
    return SampleStack(x), _truth(cfg, a, a, sym)


# ---------------------------------------------------------------------------
# error curves

METHODS = ("SPT-d", "SPT-CV", "PT", "NKP", "ECE")
GRID_PARAMS = ("d_true", "tau", "n", "k")


@dataclass
class ExperimentConfig:
    """A one-parameter sweep around ``base``.

    ``vary`` names a :class:`SimConfig` field among ``d_true``, ``tau``,
    ``n`` and ``k``.  ``cv_candidates`` defaults to ``0, 1, 3, 5, ...`` up to
    ``min(k, 2 * d_true + 3)``.
    """

    base: SimConfig = field(default_factory=SimConfig)
    vary: str = "d_true"
    values: list = field(default_factory=lambda: [9])
    methods: tuple = METHODS
    reps: int = 20
    folds: int = 10
    cv_candidates: list | None = None
    bias: bool = True

    def __post_init__(self):
        if self.vary not in GRID_PARAMS:
            raise ValueError(f"vary must be one of {GRID_PARAMS}, got {self.vary!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if self.reps < 1 or not self.values:
            raise ValueError("need at least one replicate and one grid value")
        self.methods = tuple(self.methods)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        base = SimConfig.from_dict(data.pop("base", {}))
        return cls(base=base, **data)


def default_candidates(k: int, d_true: int) -> list:
    top = min(k, 2 * max(d_true, 1) + 3)
    return [0] + list(range(1, top + 1, 2))


def _fit_errors(stack, truth, d, methods, folds, candidates, seed):
    from .bandwidth import BandwidthSearch, select_bandwidth
    from .estimators import baseline_nkp, baseline_pt, empirical_cov, estimate_full, rel_error

    out = {}
    for m in methods:
        if m == "SPT-d":
            out[m] = rel_error(estimate_full(stack, d, center=False), truth)
        elif m == "SPT-CV":
            cands = [c for c in candidates if c <= min(stack.k1, stack.k2)]
            sel = select_bandwidth(stack, BandwidthSearch(cands, folds=folds, seed=seed, center=False))
            out[m] = rel_error(estimate_full(stack, sel.d, center=False), truth)
            out["SPT-CV:d"] = sel.d
        elif m == "PT":
            out[m] = rel_error(baseline_pt(stack, center=False), truth)
        elif m == "NKP":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = baseline_nkp(stack, center=False)
            out[m] = rel_error((fit.a1, fit.a2), truth)
        elif m == "ECE":
            out[m] = rel_error(empirical_cov(stack, center=False, dense=False), truth)
    return out


def bias_error(truth: SepPlusBandedCov) -> float:
    """Relative error of the best separable approximation of ``truth``."""
    from .estimators import baseline_nkp, rel_error

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = baseline_nkp(truth, iters=500, tol=1e-12)
    return rel_error((fit.a1, fit.a2), truth)


def error_experiment(cfg: ExperimentConfig, threads: int | None = None) -> list:
    """Median relative errors per grid value and method.

    Each replicate draws a fresh stack from the substream ``(seed, cell,
    rep)``; data are mean-zero by construction and used uncentred.  Returns
    rows ``{param, value, method, median, q25, q75, reps}``; the ``bias``
    row (when requested) holds the error of the best separable approximation
    of the truth, and ``SPT-CV:d`` rows the median selected bandwidth.
    """
    rows = []
    for cell, value in enumerate(cfg.values):
        sim = SimConfig.from_dict({**cfg.base.to_dict(), cfg.vary: value})
        cands = cfg.cv_candidates or default_candidates(sim.k, sim.d_true)

        def one(rep, sim=sim, cell=cell, cands=cands):
            stack, truth = simulate(sim, rep=rep, cell=cell)
            return _fit_errors(stack, truth, sim.d_true, cfg.methods, cfg.folds, cands, seed=rep)

        reps = parallel_map(one, range(cfg.reps), threads)
        keys = [m for m in cfg.methods] + (["SPT-CV:d"] if "SPT-CV" in cfg.methods else [])
        for m in keys:
            vals = np.array([r[m] for r in reps], dtype=float)
            q25, med, q75 = np.percentile(vals, [25, 50, 75])
            rows.append(
                {"param": cfg.vary, "value": value, "method": m, "median": med, "q25": q25, "q75": q75, "reps": len(vals)}
            )
        if cfg.bias:
            _, truth = simulate(SimConfig.from_dict({**sim.to_dict(), "n": 1}), cell=cell)
            b = bias_error(truth)
            rows.append({"param": cfg.vary, "value": value, "method": "bias", "median": b, "q25": b, "q75": b, "reps": 1})
    return rows
