"""Hierarchical graph classification with lifting-based pooling."""

from .autodiff import (
    DiffMatrix,
    GradCheckReport,
    ShapeError,
    Tape,
    backward,
    constant,
    grad_check,
    softmax_cross_entropy,
)
from .data import Dataset, DataFormatError, FoldPlan, load_tu, make_folds, synth_cycles_vs_paths
from .graphs import (
    Graph,
    NormalizedAdjacency,
    batch_block_diagonal,
    cross_submatrix,
    degree,
    induced_subgraph,
    khop_augment,
    normalize_augment,
    permute_graph,
)
from .layers import GCNLayerParams, gcn_forward, readout
from .model import (
    ModelConfig,
    ModelParams,
    count_params,
    forward,
    init_params,
    load_params,
    save_params,
    trace_pooling,
)
from .pooling import (
    LiftParams,
    OpCounter,
    PoolConfig,
    PoolParams,
    PoolingOutcome,
    ScoreParams,
    classical_lift_1d,
    classical_lift_1d_inverse,
    compute_scores,
    coarsen,
    lift,
    liftpool,
    select_topk,
)
from .training import (
    AdamState,
    FoldReport,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    cross_validate,
    evaluate,
    train_one,
)

__version__ = "0.1.0"
