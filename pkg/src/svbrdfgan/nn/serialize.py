"""Binary container for named tensors.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"SVBRCKPT"
    offset 8   uint32    format version (currently 1)
    offset 12  uint32    header length H in bytes
    offset 16  H bytes   UTF-8 JSON header, keys sorted:
                           {"meta": {...},
                            "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    offset 16+H          payload: raw little-endian tensor bytes, C order,
                         concatenated in header order; "offset" is relative
                         to the start of the payload

The writer is canonical (sorted JSON, no timestamps), so equal contents
produce equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"SVBRCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    """Base class for unreadable or incompatible checkpoint files."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def save_tensors(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for tensor {name!r}")
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointTruncatedError(f"{path}: file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc

    tensors = {}
    for e in header["tensors"]:
        dt = np.dtype(_DTYPES[e["dtype"]])
        count = int(np.prod(e["shape"], dtype=np.int64))
        if count * dt.itemsize != e["nbytes"]:
            raise CheckpointShapeError(
                f"{path}: tensor {e['name']!r} shape {e['shape']} disagrees with its {e['nbytes']} stored bytes"
            )
        lo = start + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(raw):
            raise CheckpointTruncatedError(f"{path}: payload truncated inside tensor {e['name']!r}")
        tensors[e["name"]] = np.frombuffer(raw, dtype=dt, count=count, offset=lo).reshape(e["shape"]).astype(
            dt.newbyteorder("="), copy=True)
    return tensors, header["meta"]
