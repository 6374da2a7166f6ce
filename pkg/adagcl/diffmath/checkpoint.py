"""
Binary parameter checkpoints.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON header
(names, shapes, dtypes, byte offsets, step counter, metadata), then the raw
little-endian buffers in header order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from adagcl.config import CHECKPOINT_MAGIC
from adagcl.exceptions import DataError


def save_checkpoint(path, arrays: Dict[str, np.ndarray], step: int = 0, meta: Dict[str, Any] | None = None) -> Path:
    """Write ``arrays`` atomically (temp file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    buffers = []
    offset = 0
    for name, array in arrays.items():
        little = np.ascontiguousarray(array, dtype=np.dtype(array.dtype).newbyteorder("<"))
        raw = little.tobytes()
        entries.append({"name": name, "shape": list(array.shape), "dtype": little.dtype.str, "offset": offset, "nbytes": len(raw)})
        buffers.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "step": int(step), "meta": meta or {}}, sort_keys=True).encode("utf-8")

    temp = path.with_suffix(path.suffix + ".tmp")
    with open(temp, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<Q", len(header)))
        handle.write(header)
        for raw in buffers:
            handle.write(raw)
    os.replace(temp, path)
    return path


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], int, Dict[str, Any]]:
    """
    Read a checkpoint written by save_checkpoint.

    Returns:
        Tuple of (arrays by name, step counter, metadata)
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not an adagcl checkpoint")
    (length,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + length].decode("utf-8"))
    base = 16 + length
    arrays = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = blob[start:start + entry["nbytes"]]
        dtype = np.dtype(entry["dtype"])
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).astype(dtype.newbyteorder("="))
    return arrays, int(header["step"]), header.get("meta", {})
