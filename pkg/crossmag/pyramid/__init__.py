"""Synthetic slides, 20x/5x tiling, paired augmentation and manifests."""

from .augment import AugmentationPolicy, AugmentationSpec, AugOp, child_grid_permutation, paired_augment, sample_spec
from .manifest import Manifest, ManifestError, ManifestRecord, build_manifest, load_pair, read_manifest
from .synthetic import GeneratorConfig, SyntheticWsi, generate_synthetic_wsi
from .tiling import (
    GeometryError,
    PyramidPatchPair,
    decompose_parent,
    downsample_to_5x,
    reassemble_children,
    tessellate,
)

__all__ = [
    "AugmentationPolicy",
    "AugmentationSpec",
    "AugOp",
    "GeneratorConfig",
    "GeometryError",
    "Manifest",
    "ManifestError",
    "ManifestRecord",
    "PyramidPatchPair",
    "SyntheticWsi",
    "build_manifest",
    "child_grid_permutation",
    "decompose_parent",
    "downsample_to_5x",
    "generate_synthetic_wsi",
    "load_pair",
    "paired_augment",
    "read_manifest",
    "reassemble_children",
    "sample_spec",
    "tessellate",
]
