#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Speed Table Module
------------------

Patch-count geometry and the per-WSI speed accounting:

- patches per WSI at 5x and 20x for a slide of given 20x dimensions
- WSIs per minute from seconds per WSI
- speedup of every model relative to a reference row

Rates and ratios are rounded to two decimals. Every derived column is
recomputed from the raw inputs before a table is written; a stored value that
disagrees aborts the emit and names the row.
"""

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import yaml

from ..pyramid.tiling import CHILD_SIDE, DOWNSCALE
from ..utils.errors import InvariantViolation
from ..utils.logging_setup import get_logger

logger = get_logger(__name__)

MAGNIFICATIONS = {"20x": 1, "5x": DOWNSCALE}
REFERENCE_PATCHES_5X = 554
REFERENCE_PATCHES_20X = 6260
SPEED_COLUMNS = [
    "model",
    "magnification",
    "patches_per_wsi",
    "seconds_per_wsi",
    "wsis_per_minute",
    "speedup",
    "patch_ratio",
    "source",
]
PLOT_METRICS = {
    "patches": "patches_per_wsi",
    "seconds": "seconds_per_wsi",
    "wsis_per_minute": "wsis_per_minute",
    "speedup": "speedup",
}
PACKAGED_FIXTURE = Path(__file__).with_name("reference_speed.yaml")


class ArithmeticMismatchError(InvariantViolation):
    """A stored derived value disagrees with its recomputation."""


def patch_count(width_20x: int, height_20x: int, magnification: str = "5x", patch_side: int = CHILD_SIDE) -> int:
    """
    Full non-overlapping tiles of a slide at the requested magnification.

    >>> patch_count(8960, 8960, "20x"), patch_count(8960, 8960, "5x")
    (1600, 100)
    """
    if width_20x <= 0 or height_20x <= 0:
        raise ValueError(f"Slide dimensions must be positive, got {width_20x}x{height_20x}")
    if magnification not in MAGNIFICATIONS:
        raise ValueError(f"Unknown magnification {magnification}; expected one of {sorted(MAGNIFICATIONS)}")
    factor = MAGNIFICATIONS[magnification]
    return ((width_20x // factor) // patch_side) * ((height_20x // factor) // patch_side)


def wsis_per_minute(seconds_per_wsi: float) -> float:
    """
    Slides per minute, two decimals.

    >>> wsis_per_minute(6.82)
    8.8
    """
    if seconds_per_wsi <= 0:
        raise ValueError(f"seconds_per_wsi must be positive, got {seconds_per_wsi}")
    return round(60.0 / seconds_per_wsi, 2)


def speedup(t_other: float, t_self: float) -> float:
    """
    How many times faster ``t_self`` is than ``t_other``, two decimals.

    >>> speedup(201.25, 6.82)
    29.51
    """
    if t_other <= 0 or t_self <= 0:
        raise ValueError(f"Times must be positive, got {t_other} and {t_self}")
    return round(t_other / t_self, 2)


@dataclass(frozen=True)
class SpeedFixture:
    """
    One row of the speed table.

    Derived fields are optional on input; when present they are checked
    against the recomputation.

    Attributes:
        model: Model name
        patches_per_wsi: Patches processed per slide
        seconds_per_wsi: Processing time per slide
        magnification: "5x" or "20x"
        wsis_per_minute: Derived, 60 / seconds_per_wsi
        speedup: Derived, seconds_per_wsi / reference seconds_per_wsi
        patch_ratio: Derived, patches_per_wsi / reference patches_per_wsi
        source: "fixture" or "measured"
    """

    model: str
    patches_per_wsi: int
    seconds_per_wsi: float
    magnification: str = ""
    wsis_per_minute: Optional[float] = None
    speedup: Optional[float] = None
    patch_ratio: Optional[float] = None
    source: str = "fixture"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SpeedTable:
    """Fixture rows plus the reference model and caption values to cross-check."""

    rows: List[SpeedFixture]
    reference: str
    caption_speedups: Dict[str, float]
    notes: List[str] = field(default_factory=list)


def load_speed_fixtures(path: Optional[Union[str, Path]] = None) -> SpeedTable:
    """
    Read a fixture file (the packaged one when ``path`` is None).

    File fields: ``reference`` (model name), ``rows`` (list of SpeedFixture
    mappings) and optionally ``caption_speedups`` (model -> value quoted
    elsewhere, logged when it disagrees with the arithmetic).
    """
    path = Path(path) if path is not None else PACKAGED_FIXTURE
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    rows = [SpeedFixture(**row) for row in data.get("rows", [])]
    if not rows:
        raise ValueError(f"Speed fixture file {path} has no rows")
    reference = data.get("reference", rows[0].model)
    return SpeedTable(
        rows=rows,
        reference=reference,
        caption_speedups=dict(data.get("caption_speedups") or {}),
        notes=list(data.get("notes") or []),
    )


def derive_rows(rows: Sequence[SpeedFixture], reference: Optional[str] = None) -> List[SpeedFixture]:
    """
    Recompute every derived column relative to ``reference``.

    Raises:
        ValueError: If there are no rows or the reference is unknown
        ArithmeticMismatchError: If a stored derived value disagrees
    """
    if not rows:
        raise ValueError("A speed table needs at least one row")
    by_model = {row.model: row for row in rows}
    reference = reference or rows[0].model
    if reference not in by_model:
        raise ValueError(f"Reference model {reference} not among rows {sorted(by_model)}")
    ref = by_model[reference]

    derived = []
    mismatches = []
    for row in rows:
        computed = replace(
            row,
            wsis_per_minute=wsis_per_minute(row.seconds_per_wsi),
            speedup=speedup(row.seconds_per_wsi, ref.seconds_per_wsi),
            patch_ratio=round(row.patches_per_wsi / ref.patches_per_wsi, 2),
        )
        for name in ("wsis_per_minute", "speedup", "patch_ratio"):
            stored = getattr(row, name)
            if stored is not None and round(float(stored), 2) != getattr(computed, name):
                mismatches.append(f"{row.model}.{name}: stored {stored}, recomputed {getattr(computed, name)}")
        derived.append(computed)
    if mismatches:
        raise ArithmeticMismatchError("Speed table arithmetic mismatch: " + "; ".join(mismatches))
    return derived


def check_caption(rows: Sequence[SpeedFixture], caption_speedups: Dict[str, float]) -> List[str]:
    """Log and return models whose quoted speedup differs from the recomputed one."""
    by_model = {row.model: row for row in rows}
    discrepancies = []
    for model, quoted in caption_speedups.items():
        if model in by_model and round(float(quoted), 2) != by_model[model].speedup:
            logger.warning(
                "Quoted speedup for %s is %.2f but the arithmetic gives %.2f; reporting %.2f",
                model,
                quoted,
                by_model[model].speedup,
                by_model[model].speedup,
            )
            discrepancies.append(model)
    return discrepancies


def emit_speed_table(
    rows: Sequence[SpeedFixture],
    path: Union[str, Path],
    reference: Optional[str] = None,
    caption_speedups: Optional[Dict[str, float]] = None,
) -> Tuple[Path, Path]:
    """
    Write the speed table CSV and its long-format plot data.

    Args:
        rows: Fixture and measured rows
        path: CSV path; plot data goes next to it as ``<stem>_plot.csv``
        reference: Model the speedup and patch ratio are relative to
        caption_speedups: Quoted values to cross-check

    Returns:
        Tuple of (table path, plot-data path)

    Raises:
        ArithmeticMismatchError: If a stored derived value disagrees
    """
    derived = derive_rows(rows, reference)
    check_caption(derived, caption_speedups or {})

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = pd.DataFrame([row.to_dict() for row in derived])[SPEED_COLUMNS]
    table.to_csv(path, index=False)

    plot_rows = [
        {"model": row.model, "metric": metric, "value": getattr(row, column)}
        for row in derived
        for metric, column in PLOT_METRICS.items()
    ]
    plot_path = path.with_name(f"{path.stem}_plot.csv")
    pd.DataFrame(plot_rows, columns=["model", "metric", "value"]).to_csv(plot_path, index=False)
    logger.info("Speed table with %d rows written to %s", len(derived), path)
    return path, plot_path


def read_speed_table(path: Union[str, Path]) -> List[SpeedFixture]:
    """Parse a table written by :func:`emit_speed_table`."""
    frame = pd.read_csv(path, keep_default_na=False)
    return [
        SpeedFixture(
            model=str(r["model"]),
            patches_per_wsi=int(r["patches_per_wsi"]),
            seconds_per_wsi=float(r["seconds_per_wsi"]),
            magnification=str(r["magnification"]),
            wsis_per_minute=float(r["wsis_per_minute"]),
            speedup=float(r["speedup"]),
            patch_ratio=float(r["patch_ratio"]),
            source=str(r["source"]),
        )
        for r in frame.to_dict("records")
    ]
