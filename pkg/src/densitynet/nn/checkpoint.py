"""Byte-stable checkpoint container.

Layout: ``b"DNCK"``, a little-endian uint32 format version, a uint64 header
length, a canonical JSON header (sorted keys), then the raw little-endian array
payloads in header order.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .model import Model, ModelSpec

MAGIC = b"DNCK"
VERSION = 1


def save_checkpoint(path, model, metadata=None):
    entries, chunks, offset = [], [], 0
    for kind, store in (("param", model.parameters()), ("buffer", model.buffers())):
        for name, arr in store.items():
            data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(data)})
            chunks.append(data)
            offset += len(data)
    header = {
        "spec": model.spec.to_dict(),
        "dtype": model.dtype.name,
        "metadata": metadata or {},
        "entries": entries,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    """Return ``(model, metadata)``; the model comes back in eval mode."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    payload = memoryview(raw)[16 + hlen:]
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    model = Model(ModelSpec.from_dict(header["spec"]), dtype=np.dtype(header["dtype"]))
    params, buffers = {}, {}
    for e in header["entries"]:
        arr = np.frombuffer(payload[e["offset"]:e["offset"] + e["nbytes"]], dtype=dtype).reshape(e["shape"])
        (params if e["kind"] == "param" else buffers)[e["name"]] = arr
    model.load_state(params, buffers)
    return model.eval(), header["metadata"]
