#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Distillation Trainer Module
---------------------------

Trains the 5x student to reproduce the frozen 20x teacher's features.

Each step:
    1. draws a batch of pairs (and, when enabled, one augmentation per pair,
       applied identically at both magnifications)
    2. encodes the 16 children with the teacher
    3. computes the class-token and region losses through the projection heads
    4. takes one AdamW step at ``lr_at(step)``
    5. updates the EMA copies of the student and heads

The delivered model is the EMA student. Per-step values go to an append-only
CSV loss log with columns ``step, lr, L, L_global, L_local, wall_ms``.
"""

import copy
import csv
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from tqdm import tqdm

from ..models.encoders import encode_student, encode_teacher
from ..models.freeze import trainable_parameters
from ..models.vit import VisionTransformer
from ..models.weights import prefixed_state, save_encoder, save_weights
from ..pyramid.augment import AugmentationPolicy, augment_batch
from ..pyramid.manifest import Manifest, load_pair
from ..pyramid.tiling import PyramidPatchPair
from ..utils.errors import InvariantViolation
from ..utils.logging_setup import get_logger
from .heads import build_heads, project
from .losses import DistillLossBreakdown, cosine_loss, local_loss, total_loss
from .pooling import spatial_pool, teacher_global
from .schedule import DistillConfig, ema_update_module, lr_at

logger = get_logger(__name__)

LOSS_LOG_FIELDS = ("step", "lr", "L", "L_global", "L_local", "wall_ms")
ADAM_BETAS = (0.9, 0.999)
TEACHER_CHUNK = 8


class NonFiniteLossError(InvariantViolation):
    """The distillation loss became NaN or infinite."""

    def __init__(self, step: int, slide_ids: Sequence[str], keys: Sequence = ()):
        super().__init__(f"Non-finite loss at step {step} (slides: {', '.join(sorted(set(slide_ids)))})")
        self.step = step
        self.slide_ids = list(slide_ids)
        self.keys = list(keys)


@dataclass
class DistillResult:
    """
    Outcome of :func:`train_distill`.

    Attributes:
        ema_student: Final EMA weights (the delivered encoder)
        student: Live student after the last step
        heads: Live projection heads
        history: One dict per step with the loss-log columns
        loss_log: CSV path when a run directory was given
        checkpoints: Name -> written weight file
    """

    ema_student: VisionTransformer
    student: VisionTransformer
    heads: nn.ModuleDict
    history: List[Dict[str, float]] = field(default_factory=list)
    loss_log: Optional[Path] = None
    checkpoints: Dict[str, Path] = field(default_factory=dict)


class LossLog:
    """Append-only CSV of per-step losses."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        new_file = not self.path.exists() or self.path.stat().st_size == 0
        self._handle = open(self.path, "a", newline="", encoding="utf-8")
        self._writer = csv.DictWriter(self._handle, fieldnames=LOSS_LOG_FIELDS)
        if new_file:
            self._writer.writeheader()

    def write(self, row: Dict[str, float]) -> None:
        self._writer.writerow({name: row[name] for name in LOSS_LOG_FIELDS})
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "LossLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def state_digest(module: nn.Module) -> str:
    """SHA-256 over every tensor of ``module`` in state-dict order."""
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def pairs_from_manifest(manifest: Manifest, root: Union[str, Path]) -> List[PyramidPatchPair]:
    """Reload every pair of ``manifest`` in record order."""
    return [load_pair(record, root) for record in tqdm(manifest, desc="Loading pairs", disable=len(manifest) < 32)]


def distillation_loss(
    student: VisionTransformer,
    heads: nn.ModuleDict,
    patches: Union[np.ndarray, torch.Tensor],
    teacher_regions: torch.Tensor,
    config: DistillConfig,
    use_checkpoint: bool = False,
) -> DistillLossBreakdown:
    """
    Loss for one batch.

    Args:
        student: Student encoder
        heads: ModuleDict with "global" and "local" ProjectionHeads
        patches: 5x patches (uint8 [B, H, W, 3] or a float [B, 3, H, W] tensor)
        teacher_regions: [B, 16, d_T] teacher features of the matching children
        config: Loss weights
        use_checkpoint: Recompute student blocks on backward

    Returns:
        DistillLossBreakdown: Weighted total and both terms
    """
    output = encode_student(student, patches, use_checkpoint=use_checkpoint)
    teacher_regions = teacher_regions.to(output.class_token.dtype)
    projected_global = project(heads["global"], output.class_token)
    projected_local = project(heads["local"], spatial_pool(output.tokens, output.grid_side))
    global_term = cosine_loss(projected_global, teacher_global(teacher_regions))
    local_term = local_loss(teacher_regions, projected_local)
    return total_loss(global_term, local_term, config)


class DistillTrainer:
    """
    Owns the student, heads, EMA copies and optimizer for one distillation run.

    Attributes:
        config: Distillation settings
        teacher: Frozen teacher
        student: Trainable student
        heads: Trainable projection heads
        ema_student: EMA copy of the student
        ema_heads: EMA copy of the heads
    """

    def __init__(
        self,
        pairs: Sequence[PyramidPatchPair],
        teacher: VisionTransformer,
        student: VisionTransformer,
        config: DistillConfig,
        seed: int = 0,
        policy: AugmentationPolicy = AugmentationPolicy(),
        use_checkpoint: bool = False,
    ):
        if not pairs:
            raise ValueError("Distillation needs at least one PyramidPatchPair")
        if student.config.grid_side % 4:
            raise ValueError(f"Student token grid {student.config.grid_side} is not divisible by 4")

        self.pairs = list(pairs)
        self.config = config
        self.policy = policy
        self.use_checkpoint = use_checkpoint
        self.rng = np.random.default_rng(seed)
        self._queue: List[int] = []

        self.teacher = teacher
        self.teacher.eval()
        self.teacher.requires_grad_(False)

        dtype = next(student.parameters()).dtype
        self.student = student
        self.student.train()
        self.heads = build_heads(student.config.embed_dim, teacher.config.embed_dim, seed=seed).to(dtype)
        self.heads.train()

        self.ema_student = copy.deepcopy(student).requires_grad_(False)
        self.ema_heads = copy.deepcopy(self.heads).requires_grad_(False)

        self.optimizer = torch.optim.AdamW(
            trainable_parameters(self.student, self.heads),
            lr=config.peak_lr,
            betas=ADAM_BETAS,
            weight_decay=config.weight_decay,
        )

        self._teacher_cache: Optional[torch.Tensor] = None
        if not config.augment:
            self._teacher_cache = self._encode_children(self.pairs)

    def _encode_children(self, pairs: Sequence[PyramidPatchPair]) -> torch.Tensor:
        chunks = []
        for start in range(0, len(pairs), TEACHER_CHUNK):
            children = np.stack([pair.children_20x for pair in pairs[start : start + TEACHER_CHUNK]])
            chunks.append(encode_teacher(self.teacher, children).per_region)
        return torch.cat(chunks)

    def _next_indices(self) -> List[int]:
        # small manifests repeat pairs so BatchNorm always sees two or more rows
        size = max(2, min(self.config.batch_size, len(self.pairs)))
        while len(self._queue) < size:
            self._queue.extend(int(i) for i in self.rng.permutation(len(self.pairs)))
        indices, self._queue = self._queue[:size], self._queue[size:]
        return indices

    def step(self, step: int) -> Dict[str, float]:
        """
        Run one optimization step.

        Raises:
            NonFiniteLossError: If the loss is NaN or infinite
        """
        started = time.perf_counter()
        indices = self._next_indices()
        batch = [self.pairs[i] for i in indices]

        if self.config.augment:
            seeds = self.rng.integers(0, 2**31 - 1, size=len(batch))
            batch = augment_batch(batch, [int(s) for s in seeds], self.policy)
            teacher_regions = self._encode_children(batch)
        else:
            teacher_regions = self._teacher_cache[indices]

        lr = lr_at(step, self.config)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        self.optimizer.zero_grad(set_to_none=True)
        patches = np.stack([pair.patch_5x for pair in batch])
        breakdown = distillation_loss(
            self.student, self.heads, patches, teacher_regions, self.config, use_checkpoint=self.use_checkpoint
        )
        if not bool(torch.isfinite(breakdown.total)):
            raise NonFiniteLossError(step, [pair.slide_id for pair in batch], [pair.key for pair in batch])

        breakdown.total.backward()
        self.optimizer.step()
        ema_update_module(self.ema_student, self.student, self.config.ema_decay)
        ema_update_module(self.ema_heads, self.heads, self.config.ema_decay)

        row = {"step": step, "lr": lr, **breakdown.as_floats()}
        row["wall_ms"] = round((time.perf_counter() - started) * 1000.0, 3)
        return row

    def run(self, loss_log: Optional[Path] = None, progress: bool = True) -> List[Dict[str, float]]:
        """Run ``config.total_steps`` steps, appending each to ``loss_log`` when given."""
        teacher_before = state_digest(self.teacher)
        history = []
        log = LossLog(loss_log) if loss_log is not None else None
        try:
            for step in tqdm(range(self.config.total_steps), desc="Distilling", disable=not progress):
                row = self.step(step)
                history.append(row)
                if log is not None:
                    log.write(row)
                if (step + 1) % self.config.log_every == 0:
                    logger.info(
                        "step %d/%d lr=%.3g L=%.4f (global %.4f, local %.4f)",
                        step + 1,
                        self.config.total_steps,
                        row["lr"],
                        row["L"],
                        row["L_global"],
                        row["L_local"],
                    )
        finally:
            if log is not None:
                log.close()

        if state_digest(self.teacher) != teacher_before:
            raise InvariantViolation("Teacher parameters changed during distillation")
        return history

    def save_checkpoints(self, directory: Union[str, Path]) -> Dict[str, Path]:
        """
        Write ``student_ema.cmw`` (the delivered encoder) and ``distill_state.cmw``
        (student, EMA student and all heads under distinct prefixes).
        """
        directory = Path(directory)
        state = {}
        for prefix, module in (
            ("student", self.student),
            ("ema", self.ema_student),
            ("head_global", self.heads["global"]),
            ("head_local", self.heads["local"]),
            ("ema_head_global", self.ema_heads["global"]),
            ("ema_head_local", self.ema_heads["local"]),
        ):
            state.update(prefixed_state(prefix, module))
        header = {"encoder": self.student.config.to_dict(), "distill": self.config.to_dict()}
        paths = {
            "student_ema": save_encoder(directory / "student_ema.cmw", self.ema_student),
            "distill_state": save_weights(directory / "distill_state.cmw", state, header),
        }
        logger.info("Distillation checkpoints saved to %s", directory)
        return paths


def train_distill(
    pairs: Sequence[PyramidPatchPair],
    teacher: VisionTransformer,
    student: VisionTransformer,
    config: DistillConfig,
    seed: int = 0,
    run_dir: Optional[Union[str, Path]] = None,
    use_checkpoint: bool = False,
    progress: bool = True,
) -> DistillResult:
    """
    Distill ``teacher`` into ``student`` over ``pairs``.

    Args:
        pairs: Training pairs
        teacher: Frozen 20x teacher
        student: 5x student, trained in place
        config: Distillation settings
        seed: Seed for batch order, augmentation and head initialization
        run_dir: When given, writes ``logs/distill_loss.csv`` and the checkpoints
            under ``checkpoints/``
        use_checkpoint: Recompute student blocks on backward
        progress: Show a progress bar

    Returns:
        DistillResult: EMA student, live modules, per-step history and file paths

    Raises:
        NonFiniteLossError: If any step produces a NaN or infinite loss
    """
    trainer = DistillTrainer(pairs, teacher, student, config, seed=seed, use_checkpoint=use_checkpoint)
    loss_log = Path(run_dir) / "logs" / "distill_loss.csv" if run_dir is not None else None
    history = trainer.run(loss_log=loss_log, progress=progress)

    checkpoints = trainer.save_checkpoints(Path(run_dir) / "checkpoints") if run_dir is not None else {}
    return DistillResult(
        ema_student=trainer.ema_student,
        student=trainer.student,
        heads=trainer.heads,
        history=history,
        loss_log=loss_log,
        checkpoints=checkpoints,
    )
