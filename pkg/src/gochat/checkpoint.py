"""Deterministic checkpoint container: JSON header + raw array payload.

A zip-based container (npz) embeds timestamps, so re-saving identical
parameters would not be byte-identical. This format is a magic string, a
little-endian header length, a canonical JSON header describing each named
array (dtype, shape, offset), and the concatenated raw bytes. save(load(f))
reproduces f exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GCCKPT1\n"


class CheckpointError(IOError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = {}
    offset = 0
    names = sorted(arrays)
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.tobytes()
        entries[name] = {
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        }
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": 1, "meta": meta or {}, "arrays": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a checkpoint container")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + hlen].decode())
    payload = raw[start + hlen :]
    arrays = {}
    for name, entry in header["arrays"].items():
        buf = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        arrays[name] = arr
    return arrays, header["meta"]
