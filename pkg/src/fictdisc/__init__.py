"""Tabular MDP laboratory for fictitious-discount policy gradient methods."""

from .core import (
    ValueReport,
    average_reward,
    bias_q_v_a,
    deviation_matrix,
    discounted_q_v_a,
    discounted_value,
    discounted_visitation,
    finite_horizon_occupancy,
    finite_horizon_value,
    stationary_distribution,
    transition_matrix,
    truncated_discounted_q,
)
from .mdp import Mdp, MdpValidationError, generate_mdp, load_fixture, load_mdp, save_mdp
from .mixing import MixingConstants, decompose_policy, mixing_constants

__version__ = "0.1.0"
