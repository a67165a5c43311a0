"""Toy-scale vision transformer encoders, freezing and weight files."""

from .encoders import (
    ActivationHandle,
    SavedActivationCounter,
    StudentOutput,
    TeacherFeatures,
    checkpointed_forward,
    encode_student,
    encode_teacher,
)
from .freeze import FreezePlan, FreezePlanError, resolve_block_grid, set_freeze_plan, trainable_parameters
from .vit import PRESETS, EncoderConfig, ShapeError, VisionTransformer, build_encoder, preset, to_tensor
from .weights import WeightFileError, load_encoder, load_weights, save_encoder, save_weights

__all__ = [
    "PRESETS",
    "ActivationHandle",
    "EncoderConfig",
    "FreezePlan",
    "FreezePlanError",
    "SavedActivationCounter",
    "ShapeError",
    "StudentOutput",
    "TeacherFeatures",
    "VisionTransformer",
    "WeightFileError",
    "build_encoder",
    "checkpointed_forward",
    "encode_student",
    "encode_teacher",
    "load_encoder",
    "load_weights",
    "preset",
    "resolve_block_grid",
    "save_encoder",
    "save_weights",
    "set_freeze_plan",
    "to_tensor",
    "trainable_parameters",
]
