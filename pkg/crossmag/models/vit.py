#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Vision Transformer Backbone
---------------------------

A compact pre-norm vision transformer used for both the 20x teacher and the
5x student. The backbone returns the class token and the spatial patch tokens
(row-major over the G x G grid). Block-level gradient checkpointing is built
into :meth:`VisionTransformer.forward_features`.

Presets:
    toy_student   G=8, d=16, depth 4   (CPU-scale tests)
    toy_teacher   G=8, d=32, depth 4
    full_student G=16 (patch 14), d=768, depth 12
    full_teacher G=16 (patch 14), d=1536, depth 24
"""

import math
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F
from torch.utils.checkpoint import checkpoint

ROLES = ("teacher", "student")
PIXEL_MEAN = 0.5
PIXEL_STD = 0.5


class ShapeError(ValueError):
    """Tensor or image shape does not match the encoder contract."""


@dataclass(frozen=True)
class EncoderConfig:
    """
    Encoder architecture.

    Attributes:
        input_side: Input side in pixels
        patch_size: Patch side in pixels
        embed_dim: Token dimension (d_T for teachers, d_S for students)
        depth: Number of transformer blocks
        n_heads: Attention heads
        mlp_ratio: MLP hidden size relative to embed_dim
        role: "teacher" or "student"
    """

    input_side: int = 224
    patch_size: int = 28
    embed_dim: int = 16
    depth: int = 4
    n_heads: int = 2
    mlp_ratio: float = 4.0
    role: str = "student"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role}")
        if self.input_side % self.patch_size:
            raise ValueError(f"input_side {self.input_side} is not divisible by patch_size {self.patch_size}")
        if self.grid_side % 4:
            raise ValueError(f"token grid side {self.grid_side} must be divisible by 4")
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")

    @property
    def grid_side(self) -> int:
        return self.input_side // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.grid_side**2

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EncoderConfig":
        return cls(**data)


PRESETS: Dict[str, EncoderConfig] = {
    "toy_student": EncoderConfig(patch_size=28, embed_dim=16, depth=4, n_heads=2, role="student"),
    "toy_teacher": EncoderConfig(patch_size=28, embed_dim=32, depth=4, n_heads=4, role="teacher"),
    "full_student": EncoderConfig(patch_size=14, embed_dim=768, depth=12, n_heads=12, role="student"),
    "full_teacher": EncoderConfig(patch_size=14, embed_dim=1536, depth=24, n_heads=24, role="teacher"),
}


def preset(name: str, **overrides: Any) -> EncoderConfig:
    """
    Look up a preset and apply field overrides.

    >>> preset("full_student").n_tokens
    256
    >>> preset("toy_student", depth=2).depth
    2
    """
    if name not in PRESETS:
        raise ValueError(f"Unknown encoder preset: {name}. Available: {', '.join(sorted(PRESETS))}")
    return replace(PRESETS[name], **overrides) if overrides else PRESETS[name]


def to_tensor(images: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    Convert uint8 HWC images to normalized NCHW tensors.

    Args:
        images: [..., H, W, 3] uint8 array (a single image or a batch)
        dtype: Output dtype

    Returns:
        torch.Tensor: [N, 3, H, W] scaled to roughly [-1, 1]
    """
    array = np.asarray(images)
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4 or array.shape[-1] != 3:
        raise ShapeError(f"Expected [N, H, W, 3] images, got {tuple(array.shape)}")
    tensor = torch.from_numpy(np.ascontiguousarray(array)).to(dtype).permute(0, 3, 1, 2)
    return (tensor / 255.0 - PIXEL_MEAN) / PIXEL_STD


class Attention(nn.Module):
    """Multi-head self-attention."""

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, tokens, dim = x.shape
        qkv = self.qkv(x).reshape(batch, tokens, 3, self.n_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(batch, tokens, dim)
        return self.proj(out)


class Block(nn.Module):
    """Pre-norm transformer block: x + attn(norm(x)), then x + mlp(norm(x))."""

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class VisionTransformer(nn.Module):
    """
    Patch-embedding transformer returning (class token, patch tokens).

    Attributes:
        config: Architecture settings
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        dim = config.embed_dim
        self.patch_embed = nn.Conv2d(3, dim, kernel_size=config.patch_size, stride=config.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.n_tokens + 1, dim))
        self.blocks = nn.ModuleList(Block(dim, config.n_heads, config.mlp_ratio) for _ in range(config.depth))
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self._init_weights()

    def _init_weights(self) -> None:
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.trunc_normal_(module.weight, std=0.02)
                nn.init.zeros_(module.bias)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Patch-embed images and prepend the class token."""
        side = self.config.input_side
        if x.ndim != 4 or x.shape[1:] != (3, side, side):
            raise ShapeError(f"Expected [N, 3, {side}, {side}] input, got {tuple(x.shape)}")
        tokens = self.patch_embed(x).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        return torch.cat([cls, tokens], dim=1) + self.pos_embed

    def forward_features(self, x: torch.Tensor, use_checkpoint: bool = False) -> torch.Tensor:
        """
        Run the backbone and return all normalized tokens [N, 1 + G^2, d].

        With ``use_checkpoint`` in training mode only block boundaries are kept
        for backward; intra-block activations are recomputed.
        """
        x = self.embed(x)
        recompute = use_checkpoint and self.training and torch.is_grad_enabled()
        for block in self.blocks:
            if recompute:
                x = checkpoint(block, x, use_reentrant=False)
            else:
                x = block(x)
        return self.norm(x)

    def forward(self, x: torch.Tensor, use_checkpoint: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
        features = self.forward_features(x, use_checkpoint=use_checkpoint)
        return features[:, 0], features[:, 1:]


def build_encoder(config: EncoderConfig, seed: Optional[int] = None) -> VisionTransformer:
    """
    Instantiate an encoder, seeding initialization when ``seed`` is given.

    Teachers are returned frozen and in eval mode.
    """
    if seed is not None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            model = VisionTransformer(config)
    else:
        model = VisionTransformer(config)
    if config.role == "teacher":
        model.eval()
        model.requires_grad_(False)
    return model
