#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Manifest Module
---------------

Persists PyramidPatchPairs as lossless PNG files and indexes them in a
newline-delimited JSON manifest.

Layout under the manifest root:

    manifest.jsonl
    images/<slide_id>/r<row>_c<col>/parent.png
    images/<slide_id>/r<row>_c<col>/child_00.png ... child_15.png
    images/<slide_id>/r<row>_c<col>/lowmag.png

All paths stored in records are relative to the root (POSIX separators).
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from tqdm import tqdm

from ..utils.errors import CrossmagError
from ..utils.logging_setup import get_logger
from .tiling import N_CHILDREN, PyramidPatchPair, make_pair

logger = get_logger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"
RECORD_FIELDS = (
    "slide_id",
    "grid_row",
    "grid_col",
    "parent_path",
    "child_paths",
    "lowmag_path",
    "slide_label",
    "region_label_histogram",
    "format_version",
)


class ManifestError(CrossmagError):
    """Manifest content or referenced files are invalid."""


@dataclass(frozen=True)
class ManifestRecord:
    """
    One persisted tile.

    Attributes:
        slide_id: Source slide
        grid_row: Tile row
        grid_col: Tile column
        parent_path: Relative path of the 896x896 parent PNG
        child_paths: Relative paths of the 16 child PNGs in grid order
        lowmag_path: Relative path of the 224x224 5x PNG
        slide_label: Slide-level class
        region_label_histogram: Pixel count per phenotype class in the tile
        format_version: Manifest format version
    """

    slide_id: str
    grid_row: int
    grid_col: int
    parent_path: str
    child_paths: Tuple[str, ...]
    lowmag_path: str
    slide_label: int
    region_label_histogram: Tuple[int, ...] = field(default_factory=tuple)
    format_version: int = FORMAT_VERSION

    @property
    def key(self) -> Tuple[str, int, int]:
        return (self.slide_id, self.grid_row, self.grid_col)

    @property
    def dominant_region(self) -> int:
        """Most frequent phenotype in the tile (-1 without a histogram)."""
        if not self.region_label_histogram:
            return -1
        return int(np.argmax(self.region_label_histogram))

    def to_json(self) -> str:
        data = asdict(self)
        data["child_paths"] = list(self.child_paths)
        data["region_label_histogram"] = list(self.region_label_histogram)
        return json.dumps({name: data[name] for name in RECORD_FIELDS}, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        data = json.loads(line)
        missing = [name for name in RECORD_FIELDS if name not in data]
        unknown = [name for name in data if name not in RECORD_FIELDS]
        if missing or unknown:
            raise ManifestError(f"Bad manifest record fields (missing={missing}, unknown={unknown})")
        if len(data["child_paths"]) != N_CHILDREN:
            raise ManifestError(f"Record {data['slide_id']} has {len(data['child_paths'])} children, expected 16")
        data["child_paths"] = tuple(data["child_paths"])
        data["region_label_histogram"] = tuple(data["region_label_histogram"])
        return cls(**data)


@dataclass
class Manifest:
    """Ordered collection of records with unique (slide_id, grid_row, grid_col) keys."""

    records: List[ManifestRecord] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        seen = set()
        for record in self.records:
            if record.key in seen:
                raise ManifestError(f"Duplicate manifest key: {record.key}")
            seen.add(record.key)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def slide_ids(self) -> List[str]:
        """Slide ids in first-appearance order."""
        return list(dict.fromkeys(record.slide_id for record in self.records))

    def by_slide(self) -> Dict[str, List[ManifestRecord]]:
        """Group records per slide, preserving tile order within each slide."""
        grouped: Dict[str, List[ManifestRecord]] = {}
        for record in self.records:
            grouped.setdefault(record.slide_id, []).append(record)
        return grouped

    def serialize(self) -> str:
        return "".join(record.to_json() + "\n" for record in self.records)

    @classmethod
    def parse(cls, text: str) -> "Manifest":
        records = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord.from_json(line))
            except (ValueError, TypeError, KeyError) as e:
                raise ManifestError(f"Invalid manifest line {number}: {e}") from e
        versions = {record.format_version for record in records}
        if len(versions) > 1:
            raise ManifestError(f"Mixed manifest format versions: {sorted(versions)}")
        return cls(records=records, format_version=versions.pop() if versions else FORMAT_VERSION)


def save_png(image: np.ndarray, path: Path) -> None:
    """Write an 8-bit RGB image losslessly."""
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PNG")


def load_png(path: Path) -> np.ndarray:
    """Read an 8-bit RGB PNG into an HxWx3 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def _tile_dir(pair: PyramidPatchPair) -> str:
    return f"images/{pair.slide_id}/r{pair.grid_row:03d}_c{pair.grid_col:03d}"


def _write_pair(pair: PyramidPatchPair, root: Path) -> ManifestRecord:
    tile_dir = _tile_dir(pair)
    parent_path = f"{tile_dir}/parent.png"
    child_paths = tuple(f"{tile_dir}/child_{i:02d}.png" for i in range(N_CHILDREN))
    lowmag_path = f"{tile_dir}/lowmag.png"

    try:
        save_png(pair.parent_20x, root / parent_path)
        for child, child_path in zip(pair.children_20x, child_paths):
            save_png(child, root / child_path)
        save_png(pair.patch_5x, root / lowmag_path)
    except OSError as e:
        raise OSError(f"Failed writing tile {pair.key} under {root / tile_dir}: {e}") from e

    return ManifestRecord(
        slide_id=pair.slide_id,
        grid_row=pair.grid_row,
        grid_col=pair.grid_col,
        parent_path=parent_path,
        child_paths=child_paths,
        lowmag_path=lowmag_path,
        slide_label=pair.slide_label,
        region_label_histogram=tuple(pair.region_histogram),
    )


def _write_slide(pairs: Sequence[PyramidPatchPair], root: Path) -> List[ManifestRecord]:
    return [_write_pair(pair, root) for pair in pairs]


def write_manifest(manifest: Manifest, root: Union[str, Path]) -> Path:
    """Write ``manifest.jsonl`` under ``root`` and return its path."""
    path = Path(root) / MANIFEST_NAME
    try:
        path.write_text(manifest.serialize(), encoding="utf-8")
    except OSError as e:
        raise OSError(f"Failed writing manifest {path}: {e}") from e
    logger.info("Manifest with %d records saved to %s", len(manifest), path)
    return path


def build_manifest(pairs: Iterable[PyramidPatchPair], root: Union[str, Path], workers: int = 1) -> Manifest:
    """
    Persist pairs and write the manifest.

    Slides are written in parallel when ``workers > 1``; the manifest itself is
    assembled by a single writer in input order.

    Args:
        pairs: Pairs grouped by slide (as produced by successive tessellations)
        root: Output directory
        workers: Thread count for image writing

    Returns:
        Manifest: The written manifest

    Raises:
        OSError: On any write failure, with the offending path
        ManifestError: On duplicate keys
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    slides = [list(group) for _, group in groupby(pairs, key=lambda p: p.slide_id)]

    if workers > 1 and len(slides) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(tqdm(pool.map(lambda s: _write_slide(s, root), slides), total=len(slides), desc="Writing"))
    else:
        chunks = [_write_slide(slide, root) for slide in tqdm(slides, desc="Writing", disable=not slides)]

    manifest = Manifest(records=[record for chunk in chunks for record in chunk])
    write_manifest(manifest, root)
    return manifest


def read_manifest(root: Union[str, Path], check_files: bool = True) -> Manifest:
    """
    Parse ``root/manifest.jsonl``.

    Args:
        root: Manifest directory
        check_files: Verify that every referenced image exists

    Returns:
        Manifest: Parsed manifest

    Raises:
        FileNotFoundError: If the manifest file is missing
        ManifestError: If content is invalid or a referenced file is missing
    """
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    manifest = Manifest.parse(path.read_text(encoding="utf-8"))
    if check_files:
        for record in manifest:
            for rel in (record.parent_path, record.lowmag_path, *record.child_paths):
                if not (root / rel).exists():
                    raise ManifestError(f"Record {record.key} references missing file {root / rel}")
    return manifest


def load_pair(record: ManifestRecord, root: Union[str, Path]) -> PyramidPatchPair:
    """Reload a pair from disk; children and the 5x patch are re-derived from the parent."""
    root = Path(root)
    path = root / record.parent_path
    if not path.exists():
        raise ManifestError(f"Missing parent image for {record.key}: {path}")
    return make_pair(
        load_png(path),
        record.grid_row,
        record.grid_col,
        record.slide_id,
        record.slide_label,
        record.region_label_histogram,
    )
