"""Checkpoint files.

Layout: ``b"HLNET1"``, a 4-byte little-endian header length, a UTF-8 JSON
header, then every parameter as little-endian float32 in canonical order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import MicroUNet, NetConfig, _layer_shapes

MAGIC = b"HLNET1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net: MicroUNet, *, tree_fingerprint: str, leaf_names, step: int = 0, extra=None) -> None:
    header = {
        "config": net.config.to_dict(),
        "n_leaves": len(leaf_names),
        "leaf_names": list(leaf_names),
        "tree_fingerprint": tree_fingerprint,
        "step": int(step),
        "parameters": [[name, list(arr.shape)] for name, arr in net.params.items()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in net.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[MicroUNet, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[6:10])
    try:
        header = json.loads(data[10 : 10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    config = NetConfig.from_dict(header["config"])
    net = MicroUNet.__new__(MicroUNet)
    net.config = config
    net.params = {}
    offset = 10 + hlen
    for name, shape in _layer_shapes(config):
        count = int(np.prod(shape))
        chunk = data[offset : offset + 4 * count]
        if len(chunk) != 4 * count:
            raise CheckpointError(f"{path}: truncated at parameter {name}")
        net.params[name] = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        offset += 4 * count
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return net, header
