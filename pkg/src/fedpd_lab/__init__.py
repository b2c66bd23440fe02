"""Deterministic federated-optimization simulator.

Primal-dual consensus with inexact and variance-reduced local oracles,
averaged local-(S)GD and proximal baselines, heterogeneity measurement,
adversarial lower-bound instances, and a reproducible experiment harness.
"""

from ._kernels import BACKEND_NAME as kernel_backend
from .algorithms import (
    ALGORITHMS,
    AgentState,
    RoundOutcome,
    RunConfig,
    SkipChoice,
    Trace,
    build_schedule,
    dual_drift_factor,
    run,
    select_skip_probability,
)
from .data import (
    HeterogeneityReport,
    default_probe_points,
    delta_bound_logistic,
    estimate_delta,
    gen_strong_noniid,
    gen_weak_noniid,
    load_csv,
    save_csv,
    shard_round_robin,
    spectral_norm,
)
from .errors import ConfigError, DataFormatError, SolverDiverged
from .local_solvers import (
    OracleIConfig,
    OracleIIConfig,
    OracleResult,
    VrState,
    al_grad,
    al_value,
    oracle1_solve,
    oracle2_step,
    vr_update,
)
from .metrics import TraceRow, consensus_error, min_gap_curve, stationarity_gap
from .problems import (
    Chain,
    ChainSpec,
    LinearRegression,
    Logistic,
    PenalizedLogistic,
    Problem,
    QuadraticPair,
    Shard,
    chain_problem,
    phi,
    phi_prime,
    phi_second,
    psi,
    psi_prime,
    quadratic_pair_problem,
)
from .theory_checks import (
    CHAIN_CURVATURE_BOUND,
    ChainBoundsReport,
    DivergenceFactor,
    FrontierReport,
    chain_bounds_probe,
    chain_lipschitz_probe,
    chain_value_range_probe,
    diminishing_cycle_matrix,
    diminishing_divergence_factor,
    divergence_factor,
    lower_bound_history,
    lower_bound_run,
    support_frontier,
)

__version__ = "0.1.0"
