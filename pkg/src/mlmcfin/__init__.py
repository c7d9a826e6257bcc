"""Multilevel Monte Carlo engine for option pricing and Greeks under SDE models."""

from .models import LevelGrid, ModelError, ModelSpec, make_model
from .randomness import IncrementSet, antithetic_swap, sample_increments, stream
from .schemes import (CoupledPaths, PathState, SimulationError,
                      antithetic_triple, brownian_bridge_midpoint,
                      coupled_pair, euler_path, is_commutative, milstein_path,
                      piecewise_linear_interpolant)
from .payoffs import BETA_STAR, PayoffError, PayoffPair, PayoffSpec, payoff_pair
from .driver import (DriverError, LevelStats, MlmcConfig, MlmcResult, RateFit,
                     StandardMcResult, fit_rates, max_level_for_bias,
                     optimal_samples, rate_study, run_mlmc, run_standard_mc)
from .sampling import PathSampler
from .greeks import (GbmSensitivityModel, SmoothedGreekSampler,
                     SplitPathwiseSampler, VibratoSampler,
                     lrm_delta_single_level, optimal_split_count,
                     pathwise_tangent_path)
from .jumps import (JumpError, JumpPathSampler, JumpSpec, ThinnedJumpSampler,
                    jump_adapted_grid, jump_adapted_milstein_pair,
                    jump_payoff_pair, sample_jump_times)

__version__ = "0.1.0"
