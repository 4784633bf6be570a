"""Attention-fused readout of frozen vision backbones for complexity regression."""

from .analysis import (
    AblationResult,
    ImportanceProfile,
    ablate_branch,
    ablate_dino_dim,
    ablate_resnet_block,
    attention_weight_correlation,
    bh_fdr,
    dino_dimension_sweep,
    grad_importance,
    permutation_test_delta,
    resnet_block_sweep,
    skewness,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .estimator import DrexRegressor
from .exceptions import DrexError
from .features import (
    DatasetManifest,
    FeatureRecord,
    Violation,
    read_features,
    validate_manifest,
    write_features,
)
from .metrics import MetricReport, compute_report, error_metrics, pearson, spearman
from .model import (
    DrexParameters,
    FusionConfig,
    fuse,
    init_params,
    param_count,
    predict,
    predict_batch,
)
from .training import TrainConfig, TrainReport, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AblationResult",
    "Checkpoint",
    "DatasetManifest",
    "DrexError",
    "DrexParameters",
    "DrexRegressor",
    "FeatureRecord",
    "FusionConfig",
    "ImportanceProfile",
    "MetricReport",
    "TrainConfig",
    "TrainReport",
    "Violation",
    "ablate_branch",
    "ablate_dino_dim",
    "ablate_resnet_block",
    "attention_weight_correlation",
    "bh_fdr",
    "compute_report",
    "dino_dimension_sweep",
    "error_metrics",
    "evaluate",
    "fuse",
    "grad_importance",
    "init_params",
    "load_checkpoint",
    "param_count",
    "pearson",
    "permutation_test_delta",
    "predict",
    "predict_batch",
    "read_features",
    "resnet_block_sweep",
    "save_checkpoint",
    "skewness",
    "spearman",
    "train",
    "validate_manifest",
    "write_features",
    "__version__",
]
