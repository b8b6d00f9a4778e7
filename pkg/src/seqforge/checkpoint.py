"""Binary checkpoint container.

Layout (all little-endian):

    magic   4 bytes  b"YNMT"
    u32     version (currently 1)
    u32     tensor count
    per tensor:
        u16     name length, then that many UTF-8 bytes
        u8      rank
        u64     per dimension
        f32     row-major payload
    u64     metadata length, then UTF-8 JSON

Optimizer moments travel as ordinary tensors under ``opt.m.`` / ``opt.v.``
prefixes; everything else (config, step counters, rng states, data cursors,
vocabulary checksum) lives in the JSON metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .autograd import Tensor
from .model import ModelConfig, TransformerModel

MAGIC = b"YNMT"
VERSION = 1


def write_tensors(path, arrays: dict, metadata: dict):
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<Q", d)
        blob += arr.tobytes()
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    blob += struct.pack("<Q", len(meta)) + meta
    with open(path, "wb") as f:
        f.write(blob)


def read_tensors(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    off = 4
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}Q", blob, off) if rank else ()
        off += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        arrays[name] = arr.copy()
    (mlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    metadata = json.loads(blob[off:off + mlen].decode("utf-8"))
    return arrays, metadata


def save_model(path, model: TransformerModel, opt_state=None, metadata=None):
    arrays = {name: t.data for name, t in model.params.items()}
    meta = dict(metadata or {})
    meta["config"] = model.cfg.to_dict()
    if opt_state is not None:
        for name, m in opt_state.m.items():
            arrays[f"opt.m.{name}"] = m
        for name, v in opt_state.v.items():
            arrays[f"opt.v.{name}"] = v
        meta["opt_step"] = opt_state.t
    write_tensors(path, arrays, meta)


def load_model(path):
    """Returns (model, opt_arrays, metadata); opt_arrays is
    {"m": {...}, "v": {...}} or None when the file has no optimizer state."""
    arrays, meta = read_tensors(path)
    cfg = ModelConfig.from_dict(meta["config"])
    params = {}
    opt = {"m": {}, "v": {}}
    for name, arr in arrays.items():
        if name.startswith("opt.m."):
            opt["m"][name[len("opt.m."):]] = arr
        elif name.startswith("opt.v."):
            opt["v"][name[len("opt.v."):]] = arr
        else:
            params[name] = Tensor(arr, requires_grad=True)
    model = TransformerModel(cfg, params)
    return model, (opt if opt["m"] else None), meta


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
