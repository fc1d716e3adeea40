"""Checkpoint serialization.

Layout: 8 magic bytes ``AMDCKPT1``, a little-endian uint64 byte length of
the UTF-8 JSON header, the header itself, then the raw tensor payloads as
little-endian float64 in directory order.  The header carries the model
config, caller metadata, BN batch counters, and the tensor directory
(name, shape, byte offset into the payload).  Roundtrips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import IOFormatError
from .model import ModelConfig, Recognizer

MAGIC = b"AMDCKPT1"


def save_checkpoint(model: Recognizer, path: str, metadata: dict | None = None):
    arrays = model.state_arrays()
    directory = []
    offset = 0
    for name, arr in arrays.items():
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "config": model.config.to_dict(),
        "metadata": metadata or {},
        "bn_batches": {str(l.layer_id): l.batches_seen for l in model.bn_layers},
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for arr in arrays.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str):
    """Read a checkpoint; returns (model, metadata)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IOFormatError(f"cannot read checkpoint: {e}") from None
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise IOFormatError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise IOFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        directory = header["tensors"]
        bn_batches = header["bn_batches"]
    except (ValueError, KeyError, TypeError) as e:
        raise IOFormatError(f"{path}: malformed header: {e}") from None

    payload = raw[16 + hlen :]
    arrays = {}
    for entry in directory:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + count * 8
        if end > len(payload):
            raise IOFormatError(f"{path}: payload truncated at tensor {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).astype(np.float64)

    model = Recognizer(config, seed=0)
    expected = set(model.state_arrays().keys())
    if expected - set(arrays.keys()):
        raise IOFormatError(f"{path}: missing tensors {sorted(expected - set(arrays))}")
    try:
        model.load_state_arrays(arrays, bn_batches)
    except Exception as e:
        raise IOFormatError(f"{path}: {e}") from None
    return model, header["metadata"]
