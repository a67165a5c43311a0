#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Bag construction and the per-slide embedding store.

A bag holds one embedding per 5x patch of a slide, in manifest tile order.
Two views are supported:

- ``lowmag``: the encoder embeds each 5x patch (class token)
- ``children_mean``: the encoder embeds the 16 20x children of each tile and
  the tile embedding is their mean (the 20x baseline)

The store writes ``<slide_id>.f32`` plus a ``<slide_id>.yaml`` sidecar with
``slide_id``, ``M``, ``d_S``, ``label`` and ``encoder_checkpoint_hash``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from tqdm import tqdm

from ..evaluation.export import export_embeddings, read_embeddings
from ..models.encoders import encode_teacher
from ..models.vit import VisionTransformer, to_tensor
from ..pyramid.manifest import Manifest, ManifestRecord, load_png
from ..utils.errors import MissingArtifactError
from ..utils.logging_setup import get_logger
from .abmil import EmptyBagError

logger = get_logger(__name__)

VIEWS = ("lowmag", "children_mean")
ENCODE_BATCH = 32


class MissingPatchError(MissingArtifactError):
    """A patch image referenced by the manifest is missing."""

    def __init__(self, path: Union[str, Path], slide_id: str, grid_row: int, grid_col: int):
        super().__init__(path, hint=f"slide {slide_id}, tile ({grid_row}, {grid_col})")
        self.slide_id = slide_id
        self.grid_row = grid_row
        self.grid_col = grid_col


@dataclass
class Bag:
    """
    Slide-level bag of patch embeddings.

    Attributes:
        slide_id: Source slide
        embeddings: [M, d] float32, manifest tile order
        label: Slide class
    """

    slide_id: str
    embeddings: np.ndarray
    label: int

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise EmptyBagError(f"Bag {self.slide_id} has no instances (shape {self.embeddings.shape})")

    @property
    def M(self) -> int:  # pylint: disable=invalid-name
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class SlidePatches:
    """Raw 5x patches of one slide for end-to-end training: [M, 224, 224, 3] uint8."""

    slide_id: str
    patches: np.ndarray
    label: int

    @property
    def M(self) -> int:  # pylint: disable=invalid-name
        return self.patches.shape[0]


def _require(path: Path, record: ManifestRecord) -> Path:
    if not path.exists():
        raise MissingPatchError(path, record.slide_id, record.grid_row, record.grid_col)
    return path


def load_slide_patches(records: Sequence[ManifestRecord], root: Union[str, Path]) -> SlidePatches:
    """Load the 5x patches of one slide in record order."""
    if not records:
        raise EmptyBagError("No manifest records for slide")
    root = Path(root)
    patches = np.stack([load_png(_require(root / r.lowmag_path, r)) for r in records])
    return SlidePatches(slide_id=records[0].slide_id, patches=patches, label=records[0].slide_label)


@torch.no_grad()
def embed_patches(encoder: VisionTransformer, patches: np.ndarray, batch_size: int = ENCODE_BATCH) -> np.ndarray:
    """Class-token embeddings [M, d] of uint8 patches [M, H, W, 3] in inference mode."""
    was_training = encoder.training
    encoder.eval()
    try:
        dtype = next(encoder.parameters()).dtype
        chunks = [
            encoder(to_tensor(patches[start : start + batch_size], dtype=dtype))[0]
            for start in range(0, patches.shape[0], batch_size)
        ]
    finally:
        encoder.train(was_training)
    return torch.cat(chunks).to(torch.float32).numpy()


def build_bag(
    records: Sequence[ManifestRecord],
    root: Union[str, Path],
    encoder: VisionTransformer,
    view: str = "lowmag",
) -> Bag:
    """
    Embed one slide's tiles.

    Args:
        records: The slide's manifest records in tile order
        root: Manifest root
        encoder: Encoder used in inference mode
        view: "lowmag" or "children_mean"

    Returns:
        Bag: [M, d] embeddings with the slide label

    Raises:
        MissingPatchError: If a referenced image is missing (names slide and tile)
        EmptyBagError: If ``records`` is empty
    """
    if view not in VIEWS:
        raise ValueError(f"Unknown bag view: {view}. Expected one of {VIEWS}")
    if not records:
        raise EmptyBagError("No manifest records for slide")
    root = Path(root)

    if view == "lowmag":
        embeddings = embed_patches(encoder, load_slide_patches(records, root).patches)
    else:
        rows = []
        for record in records:
            children = np.stack([load_png(_require(root / rel, record)) for rel in record.child_paths])
            rows.append(encode_teacher(encoder, children).per_region[0].mean(dim=0))
        embeddings = torch.stack(rows).to(torch.float32).numpy()

    return Bag(slide_id=records[0].slide_id, embeddings=embeddings, label=records[0].slide_label)


def build_bags(
    manifest: Manifest,
    root: Union[str, Path],
    encoder: VisionTransformer,
    view: str = "lowmag",
    workers: int = 1,
) -> List[Bag]:
    """Build one bag per slide, in first-appearance order; slides run in parallel when ``workers > 1``."""
    slides = list(manifest.by_slide().values())
    if workers > 1 and len(slides) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            bags = list(
                tqdm(pool.map(lambda r: build_bag(r, root, encoder, view), slides), total=len(slides), desc="Bags")
            )
    else:
        bags = [build_bag(records, root, encoder, view) for records in tqdm(slides, desc="Bags", disable=not slides)]
    logger.info("Built %d bags (%s view)", len(bags), view)
    return bags


def save_bags(bags: Sequence[Bag], directory: Union[str, Path], encoder_hash: str) -> List[Path]:
    """Write every bag to ``directory`` as ``<slide_id>.f32`` + sidecar."""
    directory = Path(directory)
    paths = []
    for bag in bags:
        metadata = {
            "slide_id": bag.slide_id,
            "M": bag.M,
            "d_S": bag.dim,
            "label": int(bag.label),
            "encoder_checkpoint_hash": encoder_hash,
        }
        paths.append(export_embeddings(bag.embeddings, directory / bag.slide_id, metadata))
    return paths


def load_bags(directory: Union[str, Path], slide_ids: Optional[Sequence[str]] = None) -> List[Bag]:
    """
    Read bags back from ``directory``.

    Args:
        directory: Store directory
        slide_ids: Order to return; all stored slides sorted by id otherwise

    Raises:
        MissingArtifactError: If the directory or a requested slide is absent
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingArtifactError(directory, hint="embedding store")
    if slide_ids is None:
        slide_ids = sorted(p.stem for p in directory.glob("*.f32"))
    bags = []
    for slide_id in slide_ids:
        path = directory / f"{slide_id}.f32"
        if not path.exists():
            raise MissingArtifactError(path, hint=f"embeddings for slide {slide_id}")
        matrix, sidecar = read_embeddings(path)
        bags.append(Bag(slide_id=sidecar["slide_id"], embeddings=matrix, label=int(sidecar["label"])))
    return bags


def store_hashes(directory: Union[str, Path]) -> Dict[str, str]:
    """Slide id -> encoder_checkpoint_hash of every sidecar in ``directory``."""
    hashes = {}
    for path in sorted(Path(directory).glob("*.f32")):
        _, sidecar = read_embeddings(path)
        hashes[sidecar["slide_id"]] = sidecar["encoder_checkpoint_hash"]
    return hashes
