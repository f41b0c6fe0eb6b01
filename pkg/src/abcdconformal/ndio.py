"""Deterministic on-disk formats for arrays and structured headers.

Single binary container used by model checkpoints, reference tables and
cached predictions: an 8-byte magic, a little-endian uint32 header
length, a canonical JSON header (sorted keys, no whitespace), then the
raw array payloads in header order.  Floats are stored as little-endian
float64, integers as little-endian int64.  No timestamps or other
nondeterministic bytes are ever written, so rerunning a pipeline with
the same seed produces byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ABCDBIN1"

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8"), "<u8": np.dtype("<u8")}


class FormatError(ValueError):
    """Raised when a file does not match the container format."""


def canonical_json(obj) -> str:
    """JSON with sorted keys and no whitespace; floats keep full precision."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_arrays(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays plus a JSON header to a single binary file."""
    meta = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            dt = "<f8"
        elif arr.dtype.kind == "u":
            dt = "<u8"
        elif arr.dtype.kind == "i":
            dt = "<i8"
        else:
            raise FormatError(f"unsupported dtype {arr.dtype} for array {name!r}")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dt])
        meta.append({"name": name, "shape": list(arr.shape), "dtype": dt})
        payloads.append(data.tobytes())
    full_header = dict(header)
    full_header["arrays"] = meta
    blob = canonical_json(full_header).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in payloads:
            fh.write(p)


def read_arrays(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container written by :func:`write_arrays`."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for meta in header.pop("arrays"):
            shape = tuple(meta["shape"])
            dtype = _DTYPES[meta["dtype"]]
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise FormatError(f"{path}: truncated payload for {meta['name']!r}")
            arrays[meta["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return header, arrays


def write_json(path: str | Path, obj: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj) + "\n", encoding="utf-8")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
