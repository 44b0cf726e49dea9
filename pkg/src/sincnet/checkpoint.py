"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"SNC1" | u32 version | u32 header_bytes | header (UTF-8 JSON) | raw arrays

The JSON header holds ``meta`` (model config, class labels, ...) and a
``tensors`` list of ``{"name", "dtype", "shape"}`` entries; the raw
little-endian arrays follow in the same order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import UnsupportedFormatError
from .nn import ModelConfig, build_network

MAGIC = b"SNC1"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def write_tensors(path, tensors, meta=None):
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise UnsupportedFormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        entries.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[arr.dtype.name]).tobytes())
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_tensors(path):
    """Return ``(tensors, meta)`` from a checkpoint file."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise UnsupportedFormatError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 12:
        raise UnsupportedFormatError(f"{path}: truncated header")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise UnsupportedFormatError(f"{path}: unknown checkpoint version {version}")
    if len(data) < 12 + header_len:
        raise UnsupportedFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise UnsupportedFormatError(f"{path}: unreadable header ({exc})") from None
    offset = 12 + header_len
    tensors = {}
    for entry in header["tensors"]:
        if entry["dtype"] not in _DTYPES:
            raise UnsupportedFormatError(f"{path}: tensor {entry['name']!r} has dtype {entry['dtype']}")
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(data):
            raise UnsupportedFormatError(f"{path}: truncated tensor {entry['name']!r}")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(entry["dtype"])
        offset += nbytes
    return tensors, header["meta"]


def save_checkpoint(path, network, **meta):
    meta = dict(meta)
    meta["model"] = network.config.to_dict()
    meta["n_classes"] = network.n_classes
    write_tensors(path, network.state(), meta)


def load_checkpoint(path):
    """Rebuild the network stored at ``path``; returns ``(network, meta)``."""
    tensors, meta = read_tensors(path)
    if "model" not in meta:
        raise UnsupportedFormatError(f"{path}: checkpoint carries no model description")
    network = build_network(ModelConfig(**meta["model"]), meta["n_classes"])
    network.load_state(tensors)
    return network, meta
