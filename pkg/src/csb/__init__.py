"""Structurally factorised entropic transport over causal DAGs.

Each node gets its own local bridge, conditioned only on its parents; the
bridges are fitted once, layer by layer, and composed for generation and
counterfactual queries.
"""

from .bridge_core import (
    ConditionalGaussian,
    DiffusionSchedule,
    GaussianBridge,
    LocalBridge,
    NeuralDrift,
    TrainConfig,
    local_kl_energy,
    path_energy,
    solve_gaussian_bridge,
    train_flow,
    train_local_bridge,
)
from .csf import ChainCsbModel, CsbModel, fit, fit_chain, fit_scm_pair
from .errors import CsbError
from .graph_scm import Dag, Dataset, Mechanism, Scm, intervene, sample, topological_layers
from .metrics import (
    ExperimentReport,
    mechanism_leakage,
    recovery_mse,
    support_coverage,
    transport_cost_l2,
)
from .sde_engine import (
    TimeGrid,
    Trajectory,
    hybrid_counterfactual,
    integrate_ode,
    integrate_sde,
    structural_abduction,
    transport,
)

__version__ = "0.1.0"
