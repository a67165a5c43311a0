#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Weight File Module
------------------

Single-file tensor container with a text header.

File layout:

    <header byte length as ASCII decimal>\\n
    <UTF-8 JSON header>
    <raw little-endian tensor bytes>

Header fields: ``format_version``, ``config`` (free-form mapping, e.g. the
EncoderConfig) and ``tensors``, a list of ``{name, shape, dtype, offset,
nbytes}`` with offsets relative to the start of the payload. Loading a saved
file reproduces every tensor bit for bit.
"""

import json
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..utils.errors import CrossmagError
from ..utils.logging_setup import get_logger
from .vit import EncoderConfig, VisionTransformer, build_encoder

logger = get_logger(__name__)

FORMAT_VERSION = 1
_DTYPES = {
    "float32": (torch.float32, np.dtype("<f4")),
    "float64": (torch.float64, np.dtype("<f8")),
    "int64": (torch.int64, np.dtype("<i8")),
}
_TORCH_TO_NAME = {torch_dtype: name for name, (torch_dtype, _) in _DTYPES.items()}


class WeightFileError(CrossmagError):
    """Weight file is malformed or incompatible."""


def save_weights(
    path: Union[str, Path], tensors: Mapping[str, torch.Tensor], config: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write named tensors to ``path``.

    Args:
        path: Output file
        tensors: Ordered name -> tensor mapping
        config: Mapping stored verbatim in the header

    Returns:
        Path: The written path

    Raises:
        WeightFileError: On unsupported dtypes
        OSError: On write failure
    """
    path = Path(path)
    index = []
    chunks = []
    offset = 0
    for name, tensor in tensors.items():
        tensor = tensor.detach().cpu().contiguous()
        if tensor.dtype not in _TORCH_TO_NAME:
            raise WeightFileError(f"Unsupported dtype {tensor.dtype} for tensor {name}")
        dtype_name = _TORCH_TO_NAME[tensor.dtype]
        data = tensor.numpy().astype(_DTYPES[dtype_name][1], copy=False).tobytes()
        index.append(
            {"name": name, "shape": list(tensor.shape), "dtype": dtype_name, "offset": offset, "nbytes": len(data)}
        )
        chunks.append(data)
        offset += len(data)

    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config or {}, "tensors": index}, sort_keys=True
    ).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "wb") as f:
            f.write(f"{len(header)}\n".encode("ascii"))
            f.write(header)
            for chunk in chunks:
                f.write(chunk)
    except OSError as e:
        raise OSError(f"Failed writing weight file {path}: {e}") from e
    logger.debug("Saved %d tensors to %s", len(index), path)
    return path


def load_weights(path: Union[str, Path]) -> Tuple[Dict[str, Any], "OrderedDict[str, torch.Tensor]"]:
    """
    Read a weight file.

    Args:
        path: File written by :func:`save_weights`

    Returns:
        Tuple of (config mapping, ordered name -> tensor mapping)

    Raises:
        WeightFileError: If the file is malformed
        FileNotFoundError: If the file does not exist
    """
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline <= 0:
        raise WeightFileError(f"{path} has no header length line")
    try:
        header_len = int(raw[:newline].decode("ascii"))
        header = json.loads(raw[newline + 1 : newline + 1 + header_len].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise WeightFileError(f"{path} has a malformed header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise WeightFileError(f"{path} has unsupported format_version {header.get('format_version')}")

    payload = memoryview(raw)[newline + 1 + header_len :]
    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for entry in header["tensors"]:
        torch_dtype, np_dtype = _DTYPES[entry["dtype"]]
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(payload):
            raise WeightFileError(f"{path}: tensor {entry['name']} extends past end of file")
        array = np.frombuffer(payload[start:stop], dtype=np_dtype).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(array.copy()).to(torch_dtype)
    return header["config"], tensors


def prefixed_state(prefix: str, module: nn.Module) -> "OrderedDict[str, torch.Tensor]":
    """State dict of ``module`` with every key prefixed by ``prefix.``."""
    return OrderedDict((f"{prefix}.{name}", tensor) for name, tensor in module.state_dict().items())


def unprefixed_state(prefix: str, tensors: Mapping[str, torch.Tensor]) -> "OrderedDict[str, torch.Tensor]":
    """Select the tensors under ``prefix.`` and strip the prefix."""
    marker = f"{prefix}."
    return OrderedDict((name[len(marker) :], t) for name, t in tensors.items() if name.startswith(marker))


def save_encoder(path: Union[str, Path], encoder: VisionTransformer) -> Path:
    """Save an encoder with its architecture in the header."""
    return save_weights(path, encoder.state_dict(), {"encoder": encoder.config.to_dict()})


def load_encoder(path: Union[str, Path], prefix: Optional[str] = None) -> VisionTransformer:
    """
    Rebuild an encoder from a weight file.

    Args:
        path: Weight file
        prefix: Tensor-name prefix when the file holds several modules

    Returns:
        VisionTransformer: Encoder with loaded weights (frozen if it is a teacher)
    """
    config, tensors = load_weights(path)
    if "encoder" not in config:
        raise WeightFileError(f"{path} does not describe an encoder")
    encoder_config = EncoderConfig.from_dict(config["encoder"])
    encoder = build_encoder(encoder_config)
    state = unprefixed_state(prefix, tensors) if prefix else tensors
    dtype = next(iter(state.values())).dtype if state else torch.float32
    encoder.to(dtype)
    try:
        encoder.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise WeightFileError(f"{path} does not match {encoder_config}: {e}") from e
    if encoder_config.role == "teacher":
        encoder.eval()
        encoder.requires_grad_(False)
    return encoder
