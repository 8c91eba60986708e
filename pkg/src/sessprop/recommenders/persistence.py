"""Versioned binary model files.

Layout::

    b"SESSPROP" | u32 format version | u32 header length | JSON header | array bytes

The header carries the model kind, its config, model meta and, for every
array, its name, dtype, shape and byte offset into the payload. Arrays are
written little-endian and C-contiguous, so save/load round-trips exactly and
identical models produce identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..core import SessPropError
from .gru4rec import GRU4Rec, Gru4RecConfig
from .popularity import Popularity, PopularityConfig
from .sknn import SKNN, SknnConfig

MAGIC = b"SESSPROP"
FORMAT_VERSION = 1

_KINDS = {
    SKNN.kind: (SKNN, SknnConfig),
    GRU4Rec.kind: (GRU4Rec, Gru4RecConfig),
    Popularity.kind: (Popularity, PopularityConfig),
}


class ModelFormatError(SessPropError):
    pass


def save_model(model, path: str | Path, extra: dict | None = None) -> None:
    arrays = model.arrays()
    specs, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes(order="C")
        specs.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "kind": model.kind,
        "config": asdict(model.config),
        "meta": model.meta(),
        "arrays": specs,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    version, length = struct.unpack("<II", fh.read(8))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    return json.loads(fh.read(length).decode("utf-8"))


def load_model(path: str | Path):
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        payload = fh.read()
    if header["kind"] not in _KINDS:
        raise ModelFormatError(f"{path}: unknown model kind {header['kind']!r}")
    cls, config_cls = _KINDS[header["kind"]]
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="), copy=True)
    return cls.from_arrays(config_cls(**header["config"]), header["meta"], arrays)
