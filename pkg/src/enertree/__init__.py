"""Discrete-event simulator for distributed tree-network formation and
peer-to-peer energy redistribution among computationally weak agents."""

from .core import (
    DistributionKind,
    EnergyState,
    NodeConfig,
    NodeKind,
    NodeState,
    Population,
    Registers,
    TreeNetwork,
    check_distribution,
    classify,
)
from .energy import (
    DepthTarget,
    IdealEnergyTable,
    IdealTarget,
    KappaTransfer,
    LambdaExchange,
    LossModel,
    RandExchange,
    compute_ideal_energies,
    depth_target,
    ideal_target_step,
    k_depth_target_step,
    kappa_transfer_step,
    lambda_exchange_step,
    parse_energy_protocol,
    rand_exchange_step,
    sample_beta,
)
from .errors import ConfigError, DomainError, InvariantError, ReplayMismatch
from .estimation import apply_estimation_rules, estimation_stabilized, true_depths
from .formation import (
    FormationProtocol,
    apply_formation_rule,
    is_formation_complete,
    load_snapshot,
    snapshot_digest,
    snapshot_lines,
)
from .harness import (
    ExperimentConfig,
    RunResult,
    build_population,
    replay_trace,
    run_experiment,
    run_single,
)
from .metrics import (
    ConvergenceReport,
    MetricSample,
    detect_convergence,
    distribution_distance,
    energy_distance,
    energy_loss_fraction,
    line_potential,
)
from .runner import simulate
from .scheduler import (
    InteractionTrace,
    RandomScheduler,
    ScriptedScheduler,
    derive_run_seed,
    make_rng,
    read_trace,
    sample_pair,
    scripted_scheduler,
    write_trace,
)

__version__ = "0.1.0"
