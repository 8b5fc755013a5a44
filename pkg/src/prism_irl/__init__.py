"""Multi-intention inverse reinforcement learning on tabular MDPs.

A recurrent gate assigns every step of a demonstration to one of ``K`` latent
intentions; each intention owns a reward table recovered in closed form by
inverse action-value iteration. Both are fitted jointly with EM.
"""

from .config import RunConfig, load_config, profile_config, save_config
from .dataset import Trajectory, TrajectoryDataset, load_dataset, save_dataset
from .em import (
    EmState, e_step, load_checkpoint, log_likelihood, m_step, run_em, save_checkpoint,
    verify_decomposition, verify_posterior_factorization,
)
from .environments import FrustrationGridworld, build_mdp, generate, target_rewards
from .errors import (
    BoundsError, DimensionMismatch, IndexOutOfRange, InstanceTooLarge, InvalidConfig,
    NonConvergence, NumericalFault, ParseError, PrismError, TooFewPoints, ValidationError,
)
from .evaluation import cross_validate, estimate_transitions, export_maps, segment
from .gating import GatingNetwork
from .iavi import empirical_policy, iavi_solve
from .mdp import (
    TabularMdp, boltzmann_policy, expected_value_difference, load_mdp, policy_value,
    save_mdp, solve_q,
)

__version__ = "0.1.0"
