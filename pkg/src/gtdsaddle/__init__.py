"""Gradient-TD methods as stochastic solvers of a convex-concave saddle problem."""

from .domains import DomainBundle, baird, chain50, energy, get_domain
from .estimators import GradientTD
from .exceptions import (
    AbsoluteContinuityError,
    ConditioningError,
    ConvergenceError,
    DimensionError,
    GTDError,
    NumericError,
    ProbabilityError,
    SampleExhaustedError,
    SpecValidationError,
)
from .features import FeatureBasis, WeightedProjector, bebf_basis, build_projector
from .harness import ExperimentSpec, run_experiment, stepsize_sweep
from .mdp import (
    InducedChain,
    Mdp,
    PolicyTable,
    StateDistribution,
    bellman_apply,
    exact_value,
    induce_chain,
    stationary_distribution,
)
from .saddle import SaddleObjective, err, saddle_point
from .sampling import SampleSet, draw_dataset, exact_moments, sample_moments
from .solvers import SolverConfig, constant, robust, run

__version__ = "0.1.0"

__all__ = [
    "AbsoluteContinuityError", "ConditioningError", "ConvergenceError", "DimensionError",
    "DomainBundle", "ExperimentSpec", "FeatureBasis", "GTDError", "GradientTD", "InducedChain",
    "Mdp", "NumericError", "PolicyTable", "ProbabilityError", "SaddleObjective",
    "SampleExhaustedError", "SampleSet", "SolverConfig", "SpecValidationError",
    "StateDistribution", "WeightedProjector", "baird", "bebf_basis", "bellman_apply",
    "build_projector", "chain50", "constant", "draw_dataset", "energy", "err", "exact_moments",
    "exact_value", "get_domain", "induce_chain", "robust", "run", "run_experiment",
    "sample_moments", "saddle_point", "stationary_distribution", "stepsize_sweep",
]
