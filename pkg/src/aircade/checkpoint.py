"""ACDE model checkpoint files.

Layout (little-endian)::

    b"ACDE" | version u32 | meta_len u32 | meta JSON (utf-8)
    | count u32 | count x (name_len u32, name, ndim u32, dims u64 x ndim, offset u64)
    | float64 data blocks

``offset`` is measured from the start of the data section. The metadata JSON
holds the model config under ``"model"`` plus any caller-supplied keys.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .config import ModelConfig
from .model import AirCadeModel

MAGIC = b"ACDE"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _dumps(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(model: AirCadeModel, metadata: dict[str, Any] | None = None) -> bytes:
    meta = dict(metadata or {})
    meta["model"] = dataclasses.asdict(model.config)
    blob = _dumps(meta)
    named = list(model.named_parameters())
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(blob)))
    out.write(blob)
    out.write(struct.pack("<I", len(named)))
    offset = 0
    for name, p in named:
        raw = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw)) + raw)
        out.write(struct.pack(f"<I{p.data.ndim}Q", p.data.ndim, *p.data.shape))
        out.write(struct.pack("<Q", offset))
        offset += p.data.size * 8
    for _, p in named:
        out.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return out.getvalue()


def save_checkpoint(path: str | Path, model: AirCadeModel, metadata: dict[str, Any] | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, metadata))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint: need {self.pos + n} bytes, file has {len(self.buf)}"
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_header(buf: bytes) -> tuple[dict, list[tuple[str, tuple[int, ...], int]], int]:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not an ACDE checkpoint (bad magic)")
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    manifest = []
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        (offset,) = r.unpack("<Q")
        manifest.append((name, tuple(int(d) for d in shape), int(offset)))
    return meta, manifest, r.pos


def load_checkpoint(path: str | Path) -> tuple[AirCadeModel, dict[str, Any]]:
    return checkpoint_from_bytes(Path(path).read_bytes())


def checkpoint_from_bytes(buf: bytes) -> tuple[AirCadeModel, dict[str, Any]]:
    meta, manifest, data_start = read_header(buf)
    cfg = ModelConfig(**meta["model"])
    state = {}
    expected_end = data_start
    for name, shape, offset in manifest:
        size = int(np.prod(shape)) * 8
        start = data_start + offset
        if start + size > len(buf):
            raise CheckpointError(
                f"truncated checkpoint: {name} needs bytes up to {start + size}, file has {len(buf)}"
            )
        state[name] = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=start).reshape(shape)
        expected_end = max(expected_end, start + size)
    if expected_end != len(buf):
        raise CheckpointError(f"checkpoint has {len(buf) - expected_end} trailing bytes")
    model = AirCadeModel(cfg)
    model.load_state_dict(state)
    return model, meta
