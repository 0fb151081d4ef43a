"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"GECO"                      magic
    u16                          format version
    u32 + bytes                  model config, UTF-8 JSON with sorted keys
    u16 + (u16 + bytes)*n        class names
    u16                          tensor count, then per tensor:
        u16 + bytes              name
        u32 rows, u32 cols
        rows*cols float32        row-major data
    u32                          CRC-32 of every preceding byte

Tensors are written running statistics first, then parameters in
``GeccoModel.parameters()`` order.
"""
from __future__ import annotations

import dataclasses
import json
import struct
import zlib

import numpy as np

from .model import ConfigError, GeccoModel, ModelConfig

MAGIC = b"GECO"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_str(s: str, width: str = "<H") -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(width, len(raw)) + raw


def dumps(model: GeccoModel, class_names) -> bytes:
    cfg = json.dumps(dataclasses.asdict(model.config), sort_keys=True, separators=(",", ":"))
    parts = [MAGIC, struct.pack("<H", VERSION), _pack_str(cfg, "<I")]
    parts.append(struct.pack("<H", len(class_names)))
    parts += [_pack_str(str(n)) for n in class_names]
    tensors = {**model.buffers(), **model.parameters()}
    parts.append(struct.pack("<H", len(tensors)))
    for name, t in tensors.items():
        rows, cols = t.shape
        parts += [_pack_str(name), struct.pack("<II", rows, cols), np.asarray(t, dtype="<f4").tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, width: str = "<H") -> str:
        (n,) = self.unpack(width)
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("checkpoint holds an invalid string") from None


def loads(buf: bytes) -> tuple[GeccoModel, tuple[str, ...]]:
    if len(buf) < 4 + 2 + 4:
        raise CheckpointError("checkpoint is truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch (file is corrupted)")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        config = ModelConfig(**json.loads(r.string("<I")))
    except (json.JSONDecodeError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint config is invalid: {exc}") from None
    (n_classes,) = r.unpack("<H")
    class_names = tuple(r.string() for _ in range(n_classes))
    if n_classes != config.num_classes:
        raise CheckpointError(f"{n_classes} class names for a {config.num_classes}-class model")

    model = GeccoModel.init(config, 0)
    expected = {**model.buffers(), **model.parameters()}
    (n_tensors,) = r.unpack("<H")
    seen = set()
    for _ in range(n_tensors):
        name = r.string()
        rows, cols = r.unpack("<II")
        if name not in expected or expected[name].shape != (rows, cols):
            raise CheckpointError(f"unexpected tensor {name} of shape {rows}x{cols}")
        data = np.frombuffer(r.take(4 * rows * cols), dtype="<f4").reshape(rows, cols)
        model.set_tensor(name, data.astype(np.float32))
        seen.add(name)
    if seen != set(expected):
        raise CheckpointError(f"checkpoint is missing tensors {sorted(set(expected) - seen)}")
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    if model.bn_running_var is not None and not (model.bn_running_var > 0).all():
        raise CheckpointError("running variance must be positive")
    return model.eval(), class_names


def save(path, model: GeccoModel, class_names) -> None:
    with open(path, "wb") as f:
        f.write(dumps(model, class_names))


def load(path) -> tuple[GeccoModel, tuple[str, ...]]:
    with open(path, "rb") as f:
        return loads(f.read())
