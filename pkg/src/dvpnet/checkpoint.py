"""Binary checkpoint: a JSON manifest followed by raw little-endian arrays.

File layout::

    b"DVPNCKPT"            8-byte magic
    uint64 (LE)            manifest length in bytes
    manifest               UTF-8 JSON
    array bytes            row-major, in manifest order, no padding

The manifest echoes the model config and head channel layout and lists
each array's name, kind (param | buffer | state), group, shape and dtype.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .codec import HeadLayout
from .model import ModelConfig, build

MAGIC = b"DVPNCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def save_checkpoint(path, net, state=None, arrays=None):
    """Write ``net`` plus optional trainer ``state`` (JSON) and extra ``arrays``."""
    entries = []
    blobs = []
    for p in net.params:
        entries.append({"name": p.name, "kind": "param", "group": p.group})
        blobs.append(p.data)
    for name, buf in net.buffers.items():
        entries.append({"name": name, "kind": "buffer", "group": None})
        blobs.append(buf)
    for name, arr in (arrays or {}).items():
        entries.append({"name": name, "kind": "state", "group": None})
        blobs.append(np.asarray(arr))
    offset = 0
    for e, b in zip(entries, blobs):
        b = _le(b)
        e.update(shape=list(b.shape), dtype=b.dtype.str, offset=offset, nbytes=b.nbytes)
        offset += b.nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "numeric_width": 32 if net.dtype == np.float32 else 64,
        "config": net.config.to_dict(),
        "layout": HeadLayout(net.config.S).to_dict(),
        "state": state or {},
        "arrays": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for b in blobs:
            f.write(_le(b).tobytes())
    tmp.replace(path)


def read_checkpoint(path):
    """Return (manifest, {name: array})."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')}")
    base = 16 + n
    arrays = {}
    for e in manifest["arrays"]:
        start = base + e["offset"]
        buf = data[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated at array {e['name']!r}")
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return manifest, arrays


def load_checkpoint(path):
    """Rebuild the network; returns (net, trainer state dict, extra arrays)."""
    manifest, arrays = read_checkpoint(path)
    config = ModelConfig.from_dict(manifest["config"])
    dtype = np.float32 if manifest["numeric_width"] == 32 else np.float64
    net = build(config, dtype=dtype)
    kinds = {e["name"]: e for e in manifest["arrays"]}
    for p in net.params:
        e = kinds.get(p.name)
        if e is None or e["kind"] != "param" or tuple(e["shape"]) != p.shape:
            raise CheckpointError(f"{path}: parameter {p.name!r} missing or mis-shaped")
        if e["group"] != p.group:
            raise CheckpointError(f"{path}: parameter {p.name!r} group mismatch")
        p.data = np.array(arrays[p.name], dtype=dtype)
    for name, buf in net.buffers.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: buffer {name!r} missing")
        buf[...] = arrays[name]
    extra = {e["name"]: arrays[e["name"]] for e in manifest["arrays"] if e["kind"] == "state"}
    return net, manifest["state"], extra
