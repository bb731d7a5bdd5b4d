"""Command-line interface (``sptcov``).

Exit codes: 0 success, 1 user error (bad arguments, files or bandwidths),
2 numerical failure (degenerate traces, singular or non-converged solves).
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bandwidth import BandwidthSearch, select_bandwidth
from .bench import PROFILES, bench
from .core import DegenerateTraceError, OracleCapError, SptError, thread_count
from .estimators import BANDED_KINDS, empirical_cov, estimate_full, rel_error
from .gof import GofConfig, gof_test
from .io import (
    FormatError,
    config_hash,
    export_csv,
    import_csv,
    load_model,
    read_matrix_csv,
    read_stack,
    save_model,
    write_matrix_csv,
    write_stack,
)
from .simgen import ExperimentConfig, SimConfig, error_experiment, simulate
from .solver import AdiConfig, NonConvergenceError, SingularSystemError, adi_solve

REPORT_SCHEMA = "sptcov-report/1"

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2
_NUMERIC = (DegenerateTraceError, SingularSystemError, NonConvergenceError, np.linalg.LinAlgError, FloatingPointError)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})", exc.pos) from None


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (float, np.floating)) and not np.isfinite(v):
        return None
    return v


def _emit(report: dict, path):
    text = json.dumps(_clean({"schema": REPORT_SCHEMA, **report}), indent=1, default=_jsonable, allow_nan=False)
    if path:
        Path(path).write_text(text + "\n")
    else:
        click.echo(text)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serialisable: {type(v).__name__}")


def _write_rows(rows, path):
    fields = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (float(v) if isinstance(v, np.floating) else v) for k, v in r.items()})
    finally:
        if path:
            fh.close()


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from None


@click.group()
@click.version_option(__version__, prog_name="sptcov")
@click.option("--threads", type=int, default=None, help="Worker threads (default: $SPTCOV_THREADS or 1).")
@click.option("-v", "--verbose", is_flag=True, help="Log solver progress to stderr.")
@click.pass_context
def cli(ctx, threads, verbose):
    """Separable-plus-banded covariance estimation for matrix-valued data."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    ctx.obj = {"threads": thread_count(threads)}


@cli.command("simulate")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False), help="Output stack file.")
@click.option("--truth", type=click.Path(dir_okay=False), help="Write the true covariance as a model file.")
@click.option("--rep", type=int, default=0, show_default=True, help="Replicate index (RNG substream).")
def simulate_cmd(config, out, truth, rep):
    """Draw a sample stack from a JSON simulation config."""
    cfg = SimConfig.from_dict(_load_json(config))
    stack, true_cov = simulate(cfg, rep=rep)
    write_stack(out, stack)
    if truth:
        save_model(truth, true_cov, {"config_hash": config_hash(cfg.to_dict()), "seed": cfg.seed, "rep": rep})


@cli.command("estimate")
@click.argument("stack", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False), help="Output model file.")
@click.option("--d", "d", type=int, default=None, help="Bandwidth.")
@click.option("--select", "select", default=None, help="Comma-separated candidate bandwidths for cross-validation.")
@click.option("--banded", type=click.Choice(BANDED_KINDS), default="stationary", show_default=True)
@click.option("--folds", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Fold-assignment seed.")
@click.option("--no-psd", is_flag=True, help="Skip the PSD projections.")
@click.option("--no-center", is_flag=True, help="Do not subtract the sample mean.")
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), help="Model file to report rel_error against.")
@click.option("--oracle", is_flag=True, help="Also report the dense empirical-covariance error (small grids only).")
@click.option("--report", type=click.Path(dir_okay=False), help="Write the JSON report here instead of stdout.")
@click.pass_obj
def estimate_cmd(obj, stack, out, d, select, banded, folds, seed, no_psd, no_center, truth, oracle, report):
    """Fit a separable-plus-banded model to a stack file."""
    if (d is None) == (select is None):
        raise click.UsageError("give exactly one of --d or --select")
    data = read_stack(stack)
    rep = {"n": data.n, "k1": data.k1, "k2": data.k2}
    if select is not None:
        search = BandwidthSearch(
            _int_list(select), folds=folds, seed=seed, banded_kind=banded, psd=not no_psd, center=not no_center
        )
        sel = select_bandwidth(data, search, threads=obj["threads"])
        d = sel.d
        rep["cv_table"] = sel.table
    model = estimate_full(data, d, banded_kind=banded, psd=not no_psd, center=not no_center)
    rep.update(d=d, banded_kind=model.banded_kind)
    if truth:
        true_cov = load_model(truth)
        rep["rel_error"] = rel_error(model, true_cov)
        if oracle:
            emp = empirical_cov(data, center=not no_center, dense=True)
            rep["oracle_ece_rel_error"] = rel_error(emp, true_cov)
    save_model(out, model, {"stack": str(stack), "seed": seed})
    _emit(rep, report)


@cli.command("solve")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("rhs", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False), help="Solution CSV.")
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--ridge", type=float, default=1e-5, show_default=True)
@click.option("--max-outer", type=int, default=200, show_default=True)
@click.option("--method", type=click.Choice(["gmres", "stationary"]), default="gmres", show_default=True)
@click.option("--log", "log_path", type=click.Path(dir_okay=False), help="Iteration log CSV.")
def solve_cmd(model, rhs, out, tol, ridge, max_outer, method, log_path):
    """Solve (C + ridge I) X = RHS for a fitted model."""
    c = load_model(model)
    y = read_matrix_csv(rhs)
    if y.shape != c.shape:
        raise FormatError(f"right-hand side has shape {y.shape}, model grid is {c.shape}")
    res = adi_solve(c, y, AdiConfig(tol=tol, ridge=ridge, max_outer=max_outer, method=method))
    write_matrix_csv(out, res.x)
    if log_path:
        _write_rows(res.history, log_path)
    click.echo(
        json.dumps(
            {"converged": res.converged, "outer_iters": res.outer_iters, "mean_pcg_iters": res.mean_pcg_iters,
             "residual": res.residual}
        )
    )
    if not res.converged:
        raise NonConvergenceError(f"solver stopped after {res.outer_iters} outer iterations")


@cli.command("gof")
@click.argument("stack", type=click.Path(exists=True, dir_okay=False))
@click.option("--d", "d", type=int, default=0, show_default=True)
@click.option("--I", "i_dims", type=int, default=2, show_default=True)
@click.option("--J", "j_dims", type=int, default=2, show_default=True)
@click.option("--boot", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--banded", type=click.Choice(BANDED_KINDS), default="stationary", show_default=True)
@click.option("--report", type=click.Path(dir_okay=False))
@click.pass_obj
def gof_cmd(obj, stack, d, i_dims, j_dims, boot, seed, banded, report):
    """Bootstrap goodness-of-fit test at bandwidth d."""
    data = read_stack(stack)
    cfg = GofConfig(d=d, i_dims=i_dims, j_dims=j_dims, n_boot=boot, seed=seed, banded_kind=banded)
    res = gof_test(data, cfg, threads=obj["threads"])
    _emit(
        {"d": d, "I": i_dims, "J": j_dims, "n_boot": boot, "seed": seed, "p_value": res.p_value,
         "statistic": res.statistic, "redraws": res.redraws},
        report,
    )


@cli.command("bench")
@click.option("--K", "ks", default="20,40,60,80", show_default=True, help="Comma-separated grid sizes.")
@click.option("--profile", type=click.Choice(PROFILES), default="estimation", show_default=True)
@click.option("--n", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--repeats", type=int, default=1, show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), help="CSV output (default stdout).")
def bench_cmd(ks, profile, n, seed, repeats, out):
    """Timings and iteration counts across grid sizes."""
    _write_rows(bench(_int_list(ks), profile, n=n, seed=seed, repeats=repeats), out)


@cli.command("experiment")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", type=click.Path(dir_okay=False), help="CSV output (default stdout).")
@click.pass_obj
def experiment_cmd(obj, config, out):
    """Relative-error curves for the competing estimators."""
    cfg = ExperimentConfig.from_dict(_load_json(config))
    _write_rows(error_experiment(cfg, threads=obj["threads"]), out)


@cli.command("import-csv")
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def import_csv_cmd(directory, out):
    """Build a stack file from a directory of per-sample CSV matrices."""
    write_stack(out, import_csv(directory))


@cli.command("export-csv")
@click.argument("stack", type=click.Path(exists=True, dir_okay=False))
@click.argument("directory", type=click.Path(file_okay=False))
@click.option("--prefix", default="sample", show_default=True)
def export_csv_cmd(stack, directory, prefix):
    """Write each sample of a stack file as a CSV matrix."""
    export_csv(read_stack(stack), directory, prefix)


def main(argv=None) -> int:
    """Entry point mapping failures onto exit codes."""
    try:
        cli.main(args=argv, prog_name="sptcov", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USER
    except click.ClickException as exc:
        exc.show()
        return EXIT_USER
    except _NUMERIC as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERIC
    except (SptError, ValueError, OracleCapError, OSError, KeyError, TypeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USER
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
