"""poolreg: nonparametric prevalence curves from group-tested samples."""

from .kernels import EPANECHNIKOV, GAUSSIAN, UNIFORM, Kernel, kernel
from .smoothing import (
    BandwidthError,
    BandwidthRule,
    LocalFit,
    SmootherSpec,
    effective_weight_moments,
    local_poly_fit,
    select_bandwidth,
)
from .pooling import (
    BinGeometry,
    Group,
    PooledDataset,
    PoolingError,
    RawDataset,
    pool_binned,
    pool_homogeneous,
    pool_random,
    pooled_negative_probability,
)
from .models import CovariateLaw, PrevalenceModel, constant_model, make_model
from .estimators import (
    AsymptoticDiagnostics,
    EstimateResult,
    EstimationError,
    asymptotic_diagnostics,
    data_mode_diagnostics,
    estimate_dh,
    estimate_dh_binned,
    estimate_dm,
    estimate_ll,
)
from .simulation import (
    ExperimentError,
    OverpoolRow,
    RateResult,
    ReplicateFailed,
    SimulationSpec,
    SummaryCell,
    TableRow,
    TraceRow,
    ise,
    overpooling_experiment,
    rate_experiment,
    run_cell,
    run_table,
    sample_replicate,
    seed_stream,
)

__version__ = "0.1.0"

__all__ = [
    "AsymptoticDiagnostics",
    "BandwidthError",
    "BandwidthRule",
    "BinGeometry",
    "CovariateLaw",
    "EPANECHNIKOV",
    "EstimateResult",
    "EstimationError",
    "ExperimentError",
    "GAUSSIAN",
    "Group",
    "Kernel",
    "LocalFit",
    "OverpoolRow",
    "PooledDataset",
    "PoolingError",
    "PrevalenceModel",
    "RateResult",
    "RawDataset",
    "ReplicateFailed",
    "SimulationSpec",
    "SmootherSpec",
    "SummaryCell",
    "TableRow",
    "TraceRow",
    "UNIFORM",
    "asymptotic_diagnostics",
    "constant_model",
    "data_mode_diagnostics",
    "effective_weight_moments",
    "estimate_dh",
    "estimate_dh_binned",
    "estimate_dm",
    "estimate_ll",
    "ise",
    "kernel",
    "local_poly_fit",
    "make_model",
    "overpooling_experiment",
    "pool_binned",
    "pool_homogeneous",
    "pool_random",
    "pooled_negative_probability",
    "rate_experiment",
    "run_cell",
    "run_table",
    "sample_replicate",
    "seed_stream",
    "select_bandwidth",
]
