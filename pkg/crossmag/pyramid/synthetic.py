#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Synthetic Slide Generator
-------------------------

Generates deterministic mini whole-slide images at 20x. Each slide is painted
from a coarse region map: every region cell carries a phenotype class, and
each class has its own base colour and stripe frequency, so classes are
linearly separable from patch colour statistics alone.

Example:
    from crossmag.pyramid.synthetic import GeneratorConfig, generate_synthetic_wsi
    wsi = generate_synthetic_wsi(GeneratorConfig(height=1792, width=1792), seed=7)
"""

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from ..utils.logging_setup import get_logger
from .tiling import PARENT_SIDE, GeometryError

logger = get_logger(__name__)

# Eosin-like pink and haematoxylin-like purple anchor the palette
_PALETTE_START = np.array([226.0, 142.0, 186.0])
_PALETTE_END = np.array([118.0, 82.0, 176.0])


@dataclass(frozen=True)
class GeneratorConfig:
    """
    Synthetic slide settings.

    Attributes:
        height: Slide height in 20x pixels, multiple of 896
        width: Slide width in 20x pixels, multiple of 896
        n_classes: Number of phenotype classes (>= 2)
        region_cell: Side of one region-map cell in pixels
        dominant_fraction: Probability that a cell carries the slide's class
        noise_std: Gaussian pixel noise standard deviation
        stripe_amplitude: Amplitude of the class-specific stripe texture
    """

    height: int = 1792
    width: int = 1792
    n_classes: int = 2
    region_cell: int = 224
    dominant_fraction: float = 0.75
    noise_std: float = 12.0
    stripe_amplitude: float = 24.0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.height % PARENT_SIDE or self.width % PARENT_SIDE:
            raise GeometryError(
                f"Slide dimensions must be positive multiples of {PARENT_SIDE}, got {self.height}x{self.width}"
            )
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be at least 2, got {self.n_classes}")
        if self.region_cell <= 0 or PARENT_SIDE % self.region_cell:
            raise ValueError(f"region_cell must divide {PARENT_SIDE}, got {self.region_cell}")
        if not 0.0 <= self.dominant_fraction <= 1.0:
            raise ValueError("dominant_fraction must lie in [0, 1]")
        if self.noise_std < 0 or self.stripe_amplitude < 0:
            raise ValueError("noise_std and stripe_amplitude must be non-negative")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "GeneratorConfig":
        """
        Create generator settings from the ``synth`` config section.

        Args:
            section: Configuration mapping; unrelated keys are ignored

        Returns:
            GeneratorConfig: Validated settings
        """
        fields = cls.__dataclass_fields__
        return cls(**{key: value for key, value in section.items() if key in fields})


@dataclass(frozen=True)
class SyntheticWsi:
    """
    A generated slide.

    Attributes:
        id: Slide identifier derived from the seed
        pixels: H x W x 3 uint8 image
        region_labels: H x W phenotype map with values in [0, n_classes)
        slide_label: Slide-level class (the dominant region class)
        seed: Generation seed
        n_classes: Number of phenotype classes
    """

    id: str
    pixels: np.ndarray
    region_labels: np.ndarray
    slide_label: int
    seed: int
    n_classes: int

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


def class_color(label: int, n_classes: int) -> np.ndarray:
    """
    Base RGB colour of a phenotype class.

    >>> class_color(0, 2).tolist()
    [226.0, 142.0, 186.0]
    """
    t = label / (n_classes - 1)
    return (1.0 - t) * _PALETTE_START + t * _PALETTE_END


def stripe_period(label: int) -> int:
    """Stripe period in pixels; higher classes have coarser texture."""
    return 6 + 6 * label


def slide_id_for_seed(seed: int) -> str:
    """
    Stable slide identifier.

    >>> slide_id_for_seed(7)
    'wsi_000007'
    """
    return f"wsi_{seed:06d}"


def _region_map(config: GeneratorConfig, slide_label: int, rng: np.random.Generator) -> np.ndarray:
    rows = config.height // config.region_cell
    cols = config.width // config.region_cell
    dominant = rng.random((rows, cols)) < config.dominant_fraction
    # Non-dominant cells draw uniformly from the other classes
    others = rng.integers(0, config.n_classes - 1, size=(rows, cols))
    others = others + (others >= slide_label)
    cells = np.where(dominant, slide_label, others).astype(np.int64)
    return np.repeat(np.repeat(cells, config.region_cell, axis=0), config.region_cell, axis=1)


def generate_synthetic_wsi(config: GeneratorConfig, seed: int) -> SyntheticWsi:
    """
    Generate a deterministic synthetic slide.

    Args:
        config: Generator settings
        seed: Generation seed; the output is a pure function of (config, seed)

    Returns:
        SyntheticWsi: Slide pixels, region map and slide label

    Raises:
        GeometryError: If dimensions are not multiples of 896
    """
    if config.height % PARENT_SIDE or config.width % PARENT_SIDE:
        raise GeometryError(f"Slide dimensions must be multiples of {PARENT_SIDE}")

    rng = np.random.default_rng(seed)
    slide_label = int(rng.integers(0, config.n_classes))
    regions = _region_map(config, slide_label, rng)

    palette = np.stack([class_color(c, config.n_classes) for c in range(config.n_classes)])
    image = palette[regions].astype(np.float32)

    # Diagonal stripes with a per-class period; phase is random per slide
    yy, xx = np.mgrid[0 : config.height, 0 : config.width]
    diagonal = (yy + xx).astype(np.float32)
    periods = np.array([stripe_period(c) for c in range(config.n_classes)], dtype=np.float32)
    phase = np.float32(rng.uniform(0.0, 2.0 * np.pi))
    stripes = np.sin(2.0 * np.pi * diagonal / periods[regions] + phase).astype(np.float32)
    image += (config.stripe_amplitude * stripes)[..., None]

    if config.noise_std > 0:
        image += rng.normal(0.0, config.noise_std, size=image.shape).astype(np.float32)

    pixels = np.clip(np.floor(image + 0.5), 0, 255).astype(np.uint8)
    wsi = SyntheticWsi(
        id=slide_id_for_seed(seed),
        pixels=pixels,
        region_labels=regions,
        slide_label=slide_label,
        seed=seed,
        n_classes=config.n_classes,
    )
    logger.debug("Generated %s (%dx%d, label %d)", wsi.id, config.height, config.width, slide_label)
    return wsi
