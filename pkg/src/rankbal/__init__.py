"""Power-of-choice load balancing with a thin dispatch stream: prelimit
simulation, rank-based reflected diffusions, and comparison statistics."""

__version__ = "0.1.0"

from .model import (
    CapacityError,
    DiffusionParams,
    InitialCondition,
    InitialConditionSpec,
    ModelParams,
    ServiceLaw,
    ValidationError,
    diffusion_params,
    in_drift_hull,
    permissible_permutations,
    poc_probabilities,
    rank_vector,
)
from .queue import EventLog, ScaledPath, martingale_residual, scaled_path, simulate, terminal_scaled
from .reflect import ReflectedPair, reflect_step, skorokhod_map
from .sde import SdePath, TieRule, integrate, integrate_coupled, occupation_near_tie
from .stats import SampleSet, idle_fraction, ks_statistic, modulus_of_continuity, ranked_marginals
