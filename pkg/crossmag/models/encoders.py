#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Encoder contracts for the teacher (20x children) and the student (5x patch).

- ``encode_teacher`` maps 16 children to 16 class-token features [16, d_T],
  each child encoded independently in inference mode.
- ``encode_student`` maps one 5x patch to its class token and G^2 patch tokens.
- ``checkpointed_forward`` runs the student with block-level recompute and
  reports how many activation elements autograd retained.
"""

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np
import torch

from ..pyramid.tiling import CHILD_SIDE, N_CHILDREN
from .vit import ShapeError, VisionTransformer, to_tensor

ImageInput = Union[np.ndarray, torch.Tensor]


@dataclass
class StudentOutput:
    """
    Student features for a batch of 5x patches.

    Attributes:
        class_token: [B, d_S]
        tokens: [B, G^2, d_S], row-major over the token grid
    """

    class_token: torch.Tensor
    tokens: torch.Tensor

    @property
    def grid_side(self) -> int:
        return int(round(self.tokens.shape[1] ** 0.5))


@dataclass
class TeacherFeatures:
    """
    Teacher class-token features per child region.

    Attributes:
        per_region: [B, 16, d_T]; index i matches child i of decompose_parent
    """

    per_region: torch.Tensor


@dataclass
class ActivationHandle:
    """
    Output of a (possibly checkpointed) training forward pass.

    Attributes:
        class_token: [B, d]
        tokens: [B, G^2, d]
        retained_elements: Tensor elements autograd saved for backward
        retained_tensors: Number of saved tensors
    """

    class_token: torch.Tensor
    tokens: torch.Tensor
    retained_elements: int
    retained_tensors: int


class SavedActivationCounter:
    """Counts tensors autograd saves for backward while active."""

    def __init__(self):
        self.elements = 0
        self.tensors = 0

    def _pack(self, tensor: torch.Tensor) -> torch.Tensor:
        self.elements += tensor.numel()
        self.tensors += 1
        return tensor

    @staticmethod
    def _unpack(tensor: torch.Tensor) -> torch.Tensor:
        return tensor

    @contextmanager
    def track(self) -> Iterator["SavedActivationCounter"]:
        with torch.autograd.graph.saved_tensors_hooks(self._pack, self._unpack):
            yield self


def _as_input(images: ImageInput, encoder: VisionTransformer) -> torch.Tensor:
    dtype = next(encoder.parameters()).dtype
    if isinstance(images, torch.Tensor):
        return images.to(dtype)
    return to_tensor(images, dtype=dtype)


def encode_teacher(teacher: VisionTransformer, children: ImageInput) -> TeacherFeatures:
    """
    Encode 20x children independently with the frozen teacher.

    Args:
        teacher: Teacher encoder; never updated
        children: [16, 224, 224, 3] or [B, 16, 224, 224, 3] uint8 images, or a
            float tensor [B, 16, 3, 224, 224]

    Returns:
        TeacherFeatures: [B, 16, d_T]

    Raises:
        ShapeError: If the child count or size is wrong
    """
    if isinstance(children, torch.Tensor):
        if children.ndim == 4:
            children = children[None]
        if children.ndim != 5 or children.shape[1] != N_CHILDREN:
            raise ShapeError(f"Expected [B, 16, 3, H, W] children, got {tuple(children.shape)}")
        batch = children.shape[0]
        flat = children.reshape(batch * N_CHILDREN, *children.shape[2:])
    else:
        array = np.asarray(children)
        if array.ndim == 4:
            array = array[None]
        if array.ndim != 5 or array.shape[1:] != (N_CHILDREN, CHILD_SIDE, CHILD_SIDE, 3):
            raise ShapeError(f"Expected [B, 16, 224, 224, 3] children, got {tuple(array.shape)}")
        batch = array.shape[0]
        flat = array.reshape(batch * N_CHILDREN, CHILD_SIDE, CHILD_SIDE, 3)

    was_training = teacher.training
    teacher.eval()
    try:
        with torch.no_grad():
            class_token, _ = teacher(_as_input(flat, teacher))
    finally:
        teacher.train(was_training)
    return TeacherFeatures(per_region=class_token.reshape(batch, N_CHILDREN, -1))


def encode_student(student: VisionTransformer, patch: ImageInput, use_checkpoint: bool = False) -> StudentOutput:
    """
    Encode 5x patches with the student.

    Args:
        student: Student encoder
        patch: [224, 224, 3] / [B, 224, 224, 3] uint8 images or a [B, 3, H, W] tensor
        use_checkpoint: Recompute block internals on backward (training only)

    Returns:
        StudentOutput: class token [B, d_S] and tokens [B, G^2, d_S]

    Raises:
        ShapeError: If the input does not match the encoder's input side
    """
    class_token, tokens = student(_as_input(patch, student), use_checkpoint=use_checkpoint)
    return StudentOutput(class_token=class_token, tokens=tokens)


def checkpointed_forward(
    encoder: VisionTransformer, batch: ImageInput, use_checkpoint: bool = True
) -> ActivationHandle:
    """
    Training-mode forward with recompute-on-backward at block granularity.

    Loss values and gradients equal the plain path; only block outputs are
    retained between forward and backward.

    Args:
        encoder: Encoder in training mode
        batch: Input images
        use_checkpoint: Set False to run the plain path with the same accounting

    Returns:
        ActivationHandle: Outputs plus retained-activation counts
    """
    if not encoder.training:
        raise RuntimeError("checkpointed_forward requires the encoder in training mode")
    counter = SavedActivationCounter()
    with counter.track():
        class_token, tokens = encoder(_as_input(batch, encoder), use_checkpoint=use_checkpoint)
    return ActivationHandle(
        class_token=class_token,
        tokens=tokens,
        retained_elements=counter.elements,
        retained_tensors=counter.tensors,
    )
