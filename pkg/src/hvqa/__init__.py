"""Hierarchical visual question answering over precomputed region features.

A question categorizer routes each fused question+image feature to one of
several per-category answer predictors; everything trains end to end on a
small reverse-mode tensor core.
"""

from .attention import AttentionResult, FusionParams, attend_and_fuse, project
from .config import RunConfig, resolve_config
from .data import (
    DatasetManifest,
    Dims,
    GenerationResult,
    Record,
    SyntheticSpec,
    generate_synthetic,
    load_manifest,
    split,
    write_manifest,
)
from .encoders import (
    EmbeddingTable,
    LstmParams,
    RegionFeatures,
    encode_question,
    load_region_features,
    pad_or_truncate,
)
from .fileio import DataError
from .metrics import (
    CategoryScore,
    EvalReport,
    arithmetic_mpt,
    evaluate,
    harmonic_mpt,
    overall_accuracy,
)
from .model import (
    PREDICTED,
    TEACHER_FORCED,
    AnswerSpace,
    FlatModel,
    HierarchicalModel,
    MlpHead,
    baseline_predict,
    build_answer_space,
    categorize,
    load_checkpoint,
    loss_aa,
    loss_q,
    predict_answer,
    route,
    save_checkpoint,
)
from .optim import Adamax, lr_at, train
from .tensor import (
    NumericError,
    ShapeError,
    Tape,
    Tensor,
    cross_entropy,
    elementwise_product,
    matmul,
    parameter,
    softmax,
    softmax_cross_entropy,
)

__version__ = "0.1.0"
