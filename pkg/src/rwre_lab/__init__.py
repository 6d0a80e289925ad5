"""Random walks in balanced random environments, simulated through a
skew-product representation."""
from .environment import (
    EnvironmentSpec,
    EnvironmentView,
    JumpSet,
    LocalMatrix,
    kernel_at,
    shift,
    validate_environment,
)
from .dynamics import SkewState, cocycle, cylinder_interval, cylinder_measure, orbit, step
from .walker import WalkEnsemble, annealed_sample, equivalence_check, quenched_sample, simulate_ensemble
from .stats import (
    clt_distribution_test,
    empirical_covariance,
    martingale_audit,
    recurrence_stats,
    schmidt_criterion,
    theoretical_covariance,
)

__version__ = "0.1.0"

__all__ = [
    "EnvironmentSpec", "EnvironmentView", "JumpSet", "LocalMatrix", "kernel_at", "shift",
    "validate_environment", "SkewState", "cocycle", "cylinder_interval", "cylinder_measure",
    "orbit", "step", "WalkEnsemble", "annealed_sample", "equivalence_check", "quenched_sample",
    "simulate_ensemble", "clt_distribution_test", "empirical_covariance", "martingale_audit",
    "recurrence_stats", "schmidt_criterion", "theoretical_covariance",
]
