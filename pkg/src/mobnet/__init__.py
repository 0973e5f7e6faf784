"""Simulator and verification harness for a K-node network with mobile users.

Users arrive at the nodes of a network, are served processor-sharing, and
move between nodes independently of service.  The package simulates this
system exactly, couples it pathwise with a closed twin and an M/M/1 queue,
and verifies its heavy-traffic predictions: diffusion limit of the scaled
population, state space collapse onto the mobility equilibrium, exponential
stationary law, and sojourn-time limits.
"""

from .errors import MobnetError
from .mobility import (
    MixingProfile,
    MobilityProfile,
    imbalance,
    mixing_deviation,
    mixing_profile,
    mixing_time,
    transition_matrix,
    validate_generator,
)
from .network import (
    CouplingBundle,
    CycleStats,
    NetworkParams,
    TaggedUserRecord,
    balance_residual,
    closed_positions_at,
    network_params,
    sample_stationary,
    simulate_coupled,
    simulate_open,
    simulate_tagged,
    total_jump_rate,
    verify_coupling,
)
from .paths import (
    ScaledPath,
    StatePath,
    collapse_gap,
    excursion_reaching,
    excursion_start,
    first_coordinate_zero,
    first_time_above,
    first_time_below,
    first_zero,
    ratio_path,
    reflect,
    rescale,
    shift,
    stop_at_first_zero,
)
from .rbm import (
    RbmParams,
    geometric_tail,
    poisson_tail_bound,
    rbm_excursion_stats,
    rbm_marginal_cdf,
    rbm_sample_path,
    rbm_stationary_cdf,
)
from .spectral import (
    SimplexGeometry,
    SpectralDecomposition,
    check_entropy_bounds,
    closed_martingale,
    relative_entropy,
    spectral_decay_error,
    spectral_decomposition,
    spectral_product,
)
from .experiments import (
    HeavyTrafficLadder,
    build_ladder,
    proportional_state,
    run_heavy_traffic,
    run_hitting_diagnostics,
    run_homogenization,
    run_martingale_check,
    run_sojourn,
    run_stationary,
)
from .report import ExperimentReport, VerdictRow, write_report

__all__ = [name for name in dir() if not name.startswith("_")]
