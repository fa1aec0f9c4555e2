"""Inverse optimal control for discrete-time finite-horizon LQR.

Forward solves (Riccati, stacked first-order system, direct QP), exact cost
recovery with identifiability certificates, risk-based estimation from noisy
trajectories, a residual-minimization baseline, and a Monte-Carlo
consistency benchmark.
"""

from .baseline_rm import estimate_rm
from .bench_harness import (
    BenchConfig,
    TrialRecord,
    discretize,
    run_benchmark,
    sample_instance,
)
from .core_model import (
    CostMatrix,
    DuplicationMap,
    Episode,
    LtiSystem,
    TrajectoryBundle,
    duplication_map,
    load_bundle,
    load_cost,
    load_system,
    save_bundle,
    save_cost,
    save_system,
    unvech,
    vec,
    vech,
)
from .errors import (
    AmbiguousSolution,
    AsymmetricInput,
    DimensionMismatch,
    HypothesisUnmet,
    InvalidCost,
    InvalidSystem,
    IocError,
    NotIdentifiable,
    NumericalFailure,
    ParseError,
    PsdViolation,
    RejectionBudgetExceeded,
    ResidualTooLarge,
    SingularSystem,
    SizeGuardExceeded,
    SolverNotConverged,
)
from .estimate_noiseless import recover_exact, recover_with_kernel
from .estimate_noisy import (
    EstimateResult,
    RiskProblem,
    estimate,
    eval_risk,
    risk_gradient,
    smoothed_max_eig,
)
from .forward_lqr import (
    GainSchedule,
    add_noise,
    build_pmp_system,
    cost_of,
    generate_bundle,
    inputs_from_states,
    pmp_solve,
    simulate,
    solve_qp_oracle,
    solve_riccati,
)
from .identifiability import (
    IdentifiabilityReport,
    Prop2Record,
    assess,
    build_A_matrix,
    check_rank_condition,
    check_thm3,
    prop2_certificate,
    stacked_inputs_rhs,
)

__version__ = "0.1.0"

__all__ = [
    "AmbiguousSolution",
    "AsymmetricInput",
    "BenchConfig",
    "CostMatrix",
    "DimensionMismatch",
    "DuplicationMap",
    "Episode",
    "EstimateResult",
    "GainSchedule",
    "HypothesisUnmet",
    "IdentifiabilityReport",
    "InvalidCost",
    "InvalidSystem",
    "IocError",
    "LtiSystem",
    "NotIdentifiable",
    "NumericalFailure",
    "ParseError",
    "Prop2Record",
    "PsdViolation",
    "RejectionBudgetExceeded",
    "ResidualTooLarge",
    "RiskProblem",
    "SingularSystem",
    "SizeGuardExceeded",
    "SolverNotConverged",
    "TrajectoryBundle",
    "TrialRecord",
    "add_noise",
    "assess",
    "build_A_matrix",
    "build_pmp_system",
    "check_rank_condition",
    "check_thm3",
    "cost_of",
    "discretize",
    "duplication_map",
    "estimate",
    "estimate_rm",
    "eval_risk",
    "generate_bundle",
    "inputs_from_states",
    "load_bundle",
    "load_cost",
    "load_system",
    "pmp_solve",
    "prop2_certificate",
    "recover_exact",
    "recover_with_kernel",
    "risk_gradient",
    "run_benchmark",
    "sample_instance",
    "save_bundle",
    "save_cost",
    "save_system",
    "simulate",
    "smoothed_max_eig",
    "solve_qp_oracle",
    "solve_riccati",
    "stacked_inputs_rhs",
    "unvech",
    "vec",
    "vech",
]
