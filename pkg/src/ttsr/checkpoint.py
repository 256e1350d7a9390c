"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"TTSRCKPT"  u32 version
    u32 n + n bytes      config snapshot, key=value lines, UTF-8
    u64 step  u32 epoch
    table                parameters
    u32 k                optimizer count, then per optimizer:
        u32 n + name, u64 step, table (first moments), table (second moments)
    u32 n + n bytes      RNG state, JSON, UTF-8

    table  := u32 count, then records
    record := u32 name_len, name, u8 dtype tag (1 = f32, 2 = f64),
              u32 rank, u32 extents[rank], payload (row-major)
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"TTSRCKPT"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: str = ""
    step: int = 0
    epoch: int = 0
    params: dict = field(default_factory=dict)
    optim: dict = field(default_factory=dict)  # name -> {"step", "m", "v"}
    rng: dict = field(default_factory=dict)


def _w_bytes(f, b):
    f.write(struct.pack("<I", len(b)))
    f.write(b)


def _w_table(f, table):
    f.write(struct.pack("<I", len(table)))
    for name, arr in table.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise CheckpointError(f"parameter {name!r}: unsupported dtype {arr.dtype}")
        _w_bytes(f, name.encode())
        f.write(struct.pack("<BI", _TAGS[arr.dtype], arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype=_DTYPES[_TAGS[arr.dtype]]).tobytes())


def encode(ck):
    f = io.BytesIO()
    f.write(MAGIC)
    f.write(struct.pack("<I", VERSION))
    _w_bytes(f, ck.config.encode())
    f.write(struct.pack("<QI", ck.step, ck.epoch))
    _w_table(f, ck.params)
    f.write(struct.pack("<I", len(ck.optim)))
    for name, st in ck.optim.items():
        _w_bytes(f, name.encode())
        f.write(struct.pack("<Q", st["step"]))
        _w_table(f, st["m"])
        _w_table(f, st["v"])
    _w_bytes(f, json.dumps(ck.rng, sort_keys=True, separators=(",", ":")).encode())
    return f.getvalue()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self):
        (n,) = self.unpack("<I")
        return self.take(n)

    def table(self):
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            name = self.blob().decode()
            tag, rank = self.unpack("<BI")
            if tag not in _DTYPES:
                raise CheckpointError(f"record {name!r}: unknown dtype tag {tag}")
            shape = self.unpack(f"<{rank}I")
            dt = _DTYPES[tag]
            n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            out[name] = np.frombuffer(self.take(n), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        return out


def decode(buf):
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    ck = Checkpoint()
    ck.config = r.blob().decode()
    ck.step, ck.epoch = r.unpack("<QI")
    ck.params = r.table()
    (n_opt,) = r.unpack("<I")
    for _ in range(n_opt):
        name = r.blob().decode()
        (step,) = r.unpack("<Q")
        ck.optim[name] = {"step": step, "m": r.table(), "v": r.table()}
    ck.rng = json.loads(r.blob().decode())
    if r.pos != len(buf):
        raise CheckpointError(f"trailing bytes after checkpoint payload ({len(buf) - r.pos})")
    return ck


def save_checkpoint(ck, path):
    """Write atomically: a failed save never leaves a partial file at ``path``."""
    data = encode(ck)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode(f.read())
