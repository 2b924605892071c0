"""Deterministic binary checkpoint container.

Layout: 8-byte magic, uint32 format version, uint64 header length, a JSON
header (config, optional extra payload, and a parameter manifest of
name/shape/dtype/offset), then the raw little-endian buffers in manifest
order. Load-then-save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import CheckpointError

MAGIC = b"HYBENCCK"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save(path: str, arrays: dict, config: dict, extra: dict | None = None) -> None:
    manifest = []
    offset = 0
    names = sorted(arrays)
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "offset": offset,
        })
        offset += arr.nbytes
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "extra": extra or {}, "manifest": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(np.array(FORMAT_VERSION, dtype="<u4").tobytes())
        f.write(np.array(len(header), dtype="<u8").tobytes())
        f.write(header)
        for name in names:
            arr = np.ascontiguousarray(arrays[name])
            f.write(arr.astype(_DTYPES[arr.dtype.name], copy=False).tobytes())
    os.replace(tmp, path)


def load(path: str) -> tuple[dict, dict, dict]:
    """Returns (arrays, config, extra)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = int(np.frombuffer(blob[8:12], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    hlen = int(np.frombuffer(blob[12:20], dtype="<u8")[0])
    try:
        header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})")
    data = blob[20 + hlen :]
    arrays = {}
    for entry in header["manifest"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + n * dt.itemsize
        if end > len(data):
            raise CheckpointError(f"{path}: truncated buffer for {entry['name']}")
        arrays[entry["name"]] = (
            np.frombuffer(data[start:end], dtype=dt).reshape(entry["shape"]).astype(entry["dtype"])
        )
    return arrays, header["config"], header.get("extra", {})


def inspect(path: str) -> dict:
    """Header summary for the inspect-checkpoint command."""
    with open(path, "rb") as f:
        head = f.read(20)
        if head[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        hlen = int(np.frombuffer(head[12:20], dtype="<u8")[0])
        header = json.loads(f.read(hlen).decode("utf-8"))
    n_params = sum(int(np.prod(e["shape"])) if e["shape"] else 1 for e in header["manifest"])
    return {
        "format_version": header["format_version"],
        "n_tensors": len(header["manifest"]),
        "n_parameters": n_params,
        "config": header["config"],
        "manifest": header["manifest"],
    }
