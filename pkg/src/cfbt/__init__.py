"""Dual-branch, dual-modality RGB-T tracker with lightweight fusion adapters."""

from .boxes import BBox, center_error, giou, iou, normalized_center_error
from .config import (
    ModelConfig,
    SynthConfig,
    TrainConfig,
    desk_config,
    paper_config,
)
from .crops import CropAffine, crop_region, crop_to_tensor
from .data import LoadReport, RgbtSequence, load_dataset
from .errors import (
    CfbtError,
    ConfigurationError,
    ContractViolation,
    DataError,
    NumericError,
    ShapeError,
)
from .head import HeadOutput, PredictionHead
from .losses import LossBreakdown, focal_loss, gaussian_target, giou_loss, total_loss
from .metrics import MetricReport, compute_metrics, overlap
from .model import (
    CfbtModel,
    apply_freeze_policy,
    baseline_clone,
    count_parameters,
    load_external_weights,
    parameter_audit,
    parameter_manifest,
)
from .plots import emit_plots, format_report
from .synth import generate_dataset, generate_synthetic
from .tracker import (
    ModelPredictor,
    OraclePredictor,
    SequenceTracker,
    TrackResult,
    decode_box,
)
from .train import build_optimizer, evaluate_training_iou, train
from .verify import run_all_checks

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CfbtError",
    "CfbtModel",
    "ConfigurationError",
    "ContractViolation",
    "CropAffine",
    "DataError",
    "HeadOutput",
    "LoadReport",
    "LossBreakdown",
    "MetricReport",
    "ModelConfig",
    "ModelPredictor",
    "NumericError",
    "OraclePredictor",
    "PredictionHead",
    "RgbtSequence",
    "SequenceTracker",
    "ShapeError",
    "SynthConfig",
    "TrackResult",
    "TrainConfig",
    "apply_freeze_policy",
    "baseline_clone",
    "center_error",
    "compute_metrics",
    "count_parameters",
    "crop_region",
    "crop_to_tensor",
    "decode_box",
    "desk_config",
    "emit_plots",
    "evaluate_training_iou",
    "focal_loss",
    "format_report",
    "gaussian_target",
    "generate_dataset",
    "generate_synthetic",
    "giou",
    "giou_loss",
    "iou",
    "load_dataset",
    "load_external_weights",
    "normalized_center_error",
    "overlap",
    "parameter_audit",
    "parameter_manifest",
    "paper_config",
    "total_loss",
    "train",
    "build_optimizer",
    "run_all_checks",
]
