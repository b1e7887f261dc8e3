"""Certified model-order reduction for time-bounded reachability of CTMCs and CTMDPs.

The package computes time-bounded reachability probabilities for continuous-time
Markov chains by reducing the characteristic linear dynamical system to a lower
order via Schur-based generalised projections, with Lyapunov-certified error
envelopes that decay exponentially in time.  For continuous-time Markov decision
processes it synthesises dwell-time-constrained policies over the reduced
switched system with a certified error recursion.
"""

from .errors import CtreachError
from .models import (
    Ctmc,
    Ctmdp,
    ReachabilitySystem,
    PreprocessReport,
    build_reachability_system,
    build_switched_partition,
    check_assumption1,
    parse_model,
    format_model,
    prune_reducible,
    uniformize,
)
from .spectral import (
    PerronData,
    SchurFactors,
    perron_left_eigen,
    real_schur,
    reorder_dominant,
    stability_margin,
)
from .lyapunov import (
    Certificate,
    ErrorEnvelope,
    PerturbationBound,
    certificate_from_perron,
    envelope,
    perturbation_bound,
    verify_lmi,
)
from .reduction import (
    LumpingPartition,
    ReducedSystem,
    initial_state,
    lumping_projection,
    mismatch,
    project,
    reduce_ctmc,
)
from .solvers import (
    ExpSum,
    SolveResult,
    eval_expsum,
    oracle_expm,
    reach_probability,
    solve_reduced,
    triangular_expsum,
    uniformization_solve,
)
from .switched import (
    PiecewisePolicy,
    SwitchedSystem,
    bound_at_horizon,
    build_switched,
    error_recursion,
    jump_reset,
    reduce_ctmdp,
    simulate_switched_full,
    steady_error,
    synthesize_policy,
)

__version__ = "0.1.0"

__all__ = [
    "CtreachError",
    "Ctmc",
    "Ctmdp",
    "ReachabilitySystem",
    "PreprocessReport",
    "build_reachability_system",
    "build_switched_partition",
    "check_assumption1",
    "parse_model",
    "format_model",
    "prune_reducible",
    "uniformize",
    "PerronData",
    "SchurFactors",
    "perron_left_eigen",
    "real_schur",
    "reorder_dominant",
    "stability_margin",
    "Certificate",
    "ErrorEnvelope",
    "PerturbationBound",
    "certificate_from_perron",
    "envelope",
    "perturbation_bound",
    "verify_lmi",
    "LumpingPartition",
    "ReducedSystem",
    "initial_state",
    "lumping_projection",
    "mismatch",
    "project",
    "reduce_ctmc",
    "ExpSum",
    "SolveResult",
    "eval_expsum",
    "oracle_expm",
    "reach_probability",
    "solve_reduced",
    "triangular_expsum",
    "uniformization_solve",
    "PiecewisePolicy",
    "SwitchedSystem",
    "bound_at_horizon",
    "build_switched",
    "error_recursion",
    "jump_reset",
    "reduce_ctmdp",
    "simulate_switched_full",
    "steady_error",
    "synthesize_policy",
]
