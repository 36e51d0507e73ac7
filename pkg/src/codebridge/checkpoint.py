"""Deterministic checkpoint container for model weights.

Layout: magic, format version, canonical JSON header (sorted keys, no
whitespace), then each tensor as raw little-endian float64 in C order, in
the header's array order. Every byte is a pure function of the contents,
so save -> load -> save round-trips bitwise (unlike zip-based containers,
which embed timestamps).
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

from .errors import DomainError

MAGIC = b"CBCK"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> None:
    """Write arrays plus JSON-serializable metadata to path."""
    names = sorted(arrays)
    header = {
        "version": FORMAT_VERSION,
        "meta": meta,
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for n in names:
            a = np.ascontiguousarray(arrays[n], dtype="<f8")
            f.write(a.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a checkpoint written by save_checkpoint."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise DomainError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header["version"] != FORMAT_VERSION:
            raise DomainError(f"{path}: unsupported checkpoint version {header['version']}")
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise DomainError(f"{path}: truncated tensor {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        return arrays, header["meta"]
