"""Connectivity-weighted conv front end feeding a distilled image transformer."""
from .checkpoint import CheckpointError, checkpoint_bytes, load_checkpoint, read_header, save_checkpoint
from .config import FcdnConfig
from .deit import VisionTransformer, VitOutput
from .distill import DistillError, DistillOutput, Projector, attention_mass, distillation_loss
from .image import bicubic_resize, cubic_kernel, normalize_and_stack, resize_matrix
from .network import (
    FEATURE_LAYERS,
    FcdnModel,
    FcdnNetwork,
    ModelError,
    build_conv_block,
    conv_block_forward,
    fcdn_forward,
    prepare_bands,
    uniform_weights,
)
from .training import History, TrainingError, data_hash, fit_channel_weights, fit_fcdn, preprocessing_hash

__all__ = [
    "FEATURE_LAYERS",
    "CheckpointError",
    "DistillError",
    "DistillOutput",
    "FcdnConfig",
    "FcdnModel",
    "FcdnNetwork",
    "History",
    "ModelError",
    "Projector",
    "TrainingError",
    "VisionTransformer",
    "VitOutput",
    "attention_mass",
    "bicubic_resize",
    "build_conv_block",
    "checkpoint_bytes",
    "conv_block_forward",
    "cubic_kernel",
    "data_hash",
    "distillation_loss",
    "fcdn_forward",
    "fit_channel_weights",
    "fit_fcdn",
    "load_checkpoint",
    "normalize_and_stack",
    "prepare_bands",
    "preprocessing_hash",
    "read_header",
    "resize_matrix",
    "save_checkpoint",
    "uniform_weights",
]
