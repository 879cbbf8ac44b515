"""simprune: similarity-driven channel pruning for Conv-BN-activation nets.

Channels whose batch-normalization statistics make them near-duplicates are
clustered under one global threshold; each cluster keeps its strongest
member and folds the removed kernels into it.  Numerical harnesses back the
two claims the method rests on (distance convergence, bounded output shift).
"""

from .clustering import (
    BRUTE_FORCE_LIMIT,
    ClusterAssignment,
    Linkage,
    brute_force_cluster,
    hierarchical_cluster,
)
from .distance import (
    ChannelStats,
    DistanceMatrix,
    bn_channel_stats,
    build_distance_matrix,
    empirical_channel_distance,
    empirical_distance_matrix,
    matrix_to_csv,
    normalize,
    probabilistic_channel_distance,
)
from .io import ManifestError, load_model, models_identical, save_model
from .models import duplicate_channel_model, random_model, vgg16_cifar
from .planner import (
    FLOPS_CONVENTIONS,
    FlopsReport,
    LayerPlan,
    PlanMismatchError,
    PruneConfig,
    PruningPlan,
    apply_plan,
    build_pruning_plan,
    compute_lambda,
    flops_count,
    select_representative,
    single_removal_plan,
)
from .tensor import (
    ActivationKind,
    BlockActivations,
    BnParams,
    ConvKernel,
    DenseHead,
    LayerBlock,
    ModelGraph,
    NumericalError,
    PoolSpec,
    ShapeError,
    Tensor4,
    activation,
    apply_activation,
    bn_forward,
    block_forward,
    conv2d,
    model_forward,
)
from .verify import (
    ActivationReport,
    BoundReport,
    ConvergenceReport,
    LayerDistanceTriple,
    distance_matrix_report,
    measure_shift,
    verify_activation_inequality,
    verify_distance_convergence,
    verify_shift_bound,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationKind",
    "ActivationReport",
    "BlockActivations",
    "BnParams",
    "BoundReport",
    "BRUTE_FORCE_LIMIT",
    "brute_force_cluster",
    "bn_channel_stats",
    "bn_forward",
    "block_forward",
    "build_distance_matrix",
    "build_pruning_plan",
    "ChannelStats",
    "ClusterAssignment",
    "compute_lambda",
    "ConvergenceReport",
    "ConvKernel",
    "conv2d",
    "DenseHead",
    "DistanceMatrix",
    "distance_matrix_report",
    "duplicate_channel_model",
    "empirical_channel_distance",
    "empirical_distance_matrix",
    "FLOPS_CONVENTIONS",
    "FlopsReport",
    "flops_count",
    "hierarchical_cluster",
    "LayerBlock",
    "LayerDistanceTriple",
    "LayerPlan",
    "Linkage",
    "load_model",
    "ManifestError",
    "matrix_to_csv",
    "measure_shift",
    "ModelGraph",
    "model_forward",
    "models_identical",
    "normalize",
    "NumericalError",
    "PlanMismatchError",
    "PoolSpec",
    "probabilistic_channel_distance",
    "PruneConfig",
    "PruningPlan",
    "random_model",
    "save_model",
    "select_representative",
    "ShapeError",
    "single_removal_plan",
    "Tensor4",
    "activation",
    "apply_activation",
    "apply_plan",
    "vgg16_cifar",
    "verify_activation_inequality",
    "verify_distance_convergence",
    "verify_shift_bound",
]
