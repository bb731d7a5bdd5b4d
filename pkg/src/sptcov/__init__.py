"""Separable-plus-banded covariance estimation for matrix-valued data."""

__version__ = "0.1.0"

from .bandwidth import BandwidthResult, BandwidthSearch, cv_objective, select_bandwidth
from .core import (
    BandwidthError,
    DegenerateTraceError,
    OracleCapError,
    SampleStack,
    SptError,
)
from .estimators import (
    baseline_nkp,
    baseline_pt,
    empirical_cov,
    estimate_banded,
    estimate_full,
    estimate_separable,
    rel_error,
)
from .gof import GofConfig, GofResult, gof_test
from .io import FormatError, load_model, read_stack, save_model, write_stack
from .model import BandedTensor, EmpiricalCov, SepPlusBandedCov
from .simgen import ExperimentConfig, SimConfig, error_experiment, simulate
from .solver import AdiConfig, AdiResult, NonConvergenceError, SingularSystemError, adi_solve, pcg_solve
from .stationary import StationarySymbol
