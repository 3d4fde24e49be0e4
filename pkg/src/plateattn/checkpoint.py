"""Checkpoint container: JSON header + raw little-endian float32 arrays.

Layout: 4-byte magic ``LPCK``, uint64-LE header length, UTF-8 JSON header,
then each parameter's values as float32 little-endian in header order.
Round-trips byte-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

MAGIC = b"LPCK"
FORMAT_VERSION = 1


def save(path, header: dict, arrays: Dict[str, np.ndarray]):
    """Write a checkpoint. ``header`` must be JSON-serializable; parameter
    names/shapes are recorded under ``params`` in insertion order."""
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["params"] = [
        {"name": name, "shape": list(a.shape)} for name, a in arrays.items()
    ]
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Read a checkpoint back into (header, {name: float32 array})."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[4:12])
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    arrays: Dict[str, np.ndarray] = {}
    off = 12 + hlen
    for meta in header["params"]:
        shape = tuple(meta["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
        arrays[meta["name"]] = arr.copy()
        off += 4 * n
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after parameter payload")
    return header, arrays
