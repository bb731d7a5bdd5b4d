"""Timing and iteration-count benchmarks over grid sizes."""

from __future__ import annotations

import time

import numpy as np

from .core import make_rng
from .estimators import estimate_full
from .simgen import SimConfig, simulate
from .solver import AdiConfig, adi_solve, pcg_solve
from .stationary import StationarySymbol, psd_project_symbol

__all__ = ["PROFILES", "design_bandwidth", "manufactured_solve", "bench"]

PROFILES = ("estimation", "adi", "pcg")


def design_bandwidth(k: int, frac: float = 0.1) -> int:
    """Odd moving-average window closest above ``frac * k`` (at least 1)."""
    return int(frac * k) | 1


def manufactured_solve(k: int, seed: int = 0, n: int = 300, tau: float = 3.0, cfg: AdiConfig | None = None):
    """Fit a simulated stack, pick a random ``X``, solve ``C X = Y`` and report.

    The bandwidth follows ``design_bandwidth(k)`` for both simulation and fit.
    Returns ``(result, rel_error, seconds)`` where ``rel_error`` compares the
    solution with the manufactured ``X``.
    """
    cfg = cfg or AdiConfig()
    d = design_bandwidth(k)
    stack, _ = simulate(SimConfig(k=k, n=n, tau=tau, d_true=d, seed=seed))
    model = estimate_full(stack, d, center=False)
    x = make_rng(seed, 7).standard_normal((k, k))
    y = model.apply(x) + cfg.ridge * x
    t0 = time.perf_counter()
    res = adi_solve(model, y, cfg)
    dt = time.perf_counter() - t0
    return res, float(np.linalg.norm(res.x - x) / np.linalg.norm(x)), dt


def _random_symbol(k, rng, band):
    s = rng.standard_normal((2 * k - 1, 2 * k - 1))
    s = 0.5 * (s + s[::-1, ::-1])
    return psd_project_symbol(StationarySymbol(s, band=band))


def bench(ks, profile: str = "estimation", n: int = 100, seed: int = 0, repeats: int = 1) -> list:
    """One row per grid size; times are the best of ``repeats`` runs."""
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}")
    rows = []
    for k in ks:
        k = int(k)
        if profile == "estimation":
            d = design_bandwidth(k)
            stack, _ = simulate(SimConfig(k=k, n=n, d_true=d, seed=seed))
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                estimate_full(stack, d, center=False)
                best = min(best, time.perf_counter() - t0)
            rows.append({"K": k, "N": n, "d": d, "seconds": best})
        elif profile == "adi":
            res, err, dt = manufactured_solve(k, seed=seed)
            rows.append(
                {
                    "K": k,
                    "d": design_bandwidth(k),
                    "outer_iters": res.outer_iters,
                    "mean_pcg_iters": res.mean_pcg_iters,
                    "converged": res.converged,
                    "rel_error": err,
                    "seconds": dt,
                }
            )
        else:
            rng = make_rng(seed, k)
            sym = _random_symbol(k, rng, band=None)
            y = rng.standard_normal((k, k))
            t0 = time.perf_counter()
            out = pcg_solve(sym, 1e-2, y, tol=1e-8)
            rows.append(
                {"K": k, "iterations": out.iterations, "residual": out.residual, "converged": out.converged,
                 "seconds": time.perf_counter() - t0}
            )
    return rows
