"""Desk-scale simulator for decentralized nonsmooth nonconvex stochastic
optimization with client sampling and accelerated gossip."""

__version__ = "0.1.0"

from ._kernels import active_backend
from .core import (
    DivergenceError,
    EpochOutputs,
    PlanOverrides,
    RunPlan,
    inner_update,
    plan_parameters,
    run_baseline_full_participation,
    run_docs,
)
from .gossip import GossipConfig, fast_gossip, plain_gossip, plan_rounds
from .metrics import (
    GoldsteinProbeConfig,
    MetricsRecord,
    MetricsSink,
    consensus_errors,
    goldstein_norm_estimate,
)
from .oracles import (
    CappedHingeSvmProblem,
    DataSample,
    OracleSample,
    PiecewiseProblem,
    first_order_estimator,
    load_libsvm,
    serialize_libsvm,
    shard,
    svm_subgradient,
    svm_value,
    zeroth_order_estimator,
)
from .topology import (
    MixingMatrix,
    TopologyError,
    build_complete,
    build_ring,
    from_weights,
    single_client,
    spectral_gap,
)

__all__ = [
    "__version__",
    "active_backend",
    "DivergenceError",
    "EpochOutputs",
    "PlanOverrides",
    "RunPlan",
    "inner_update",
    "plan_parameters",
    "run_baseline_full_participation",
    "run_docs",
    "GossipConfig",
    "fast_gossip",
    "plain_gossip",
    "plan_rounds",
    "GoldsteinProbeConfig",
    "MetricsRecord",
    "MetricsSink",
    "consensus_errors",
    "goldstein_norm_estimate",
    "CappedHingeSvmProblem",
    "DataSample",
    "OracleSample",
    "PiecewiseProblem",
    "first_order_estimator",
    "load_libsvm",
    "serialize_libsvm",
    "shard",
    "svm_subgradient",
    "svm_value",
    "zeroth_order_estimator",
    "MixingMatrix",
    "TopologyError",
    "build_complete",
    "build_ring",
    "from_weights",
    "single_client",
    "spectral_gap",
]
