"""Binary checkpoint format.

    b"GFTC" | u32 version | u64 n | n bytes UTF-8 JSON header
    then per tensor: u32 n | n bytes UTF-8 name | u32 rank | u64 dim * rank | float32 payload

All integers and floats little-endian. The JSON header carries the model
config and, optionally, vocabularies and training state. Optimizer moments
are stored as extra tensors named ``optim.m.<param>`` / ``optim.v.<param>``.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ModelConfig, TransformerModel, build_model

MAGIC = b"GFTC"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def _write_tensor(buf, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def dumps(model: TransformerModel, extra: Optional[dict] = None,
          optim_state: Optional[dict] = None) -> bytes:
    header = {"model_config": model.cfg.to_dict(), **(extra or {})}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for name, p in model.named_parameters():
        _write_tensor(buf, name, p.data)
    for name, arr in (optim_state or {}).items():
        _write_tensor(buf, name, arr)
    return buf.getvalue()


def save_checkpoint(model: TransformerModel, path, extra: Optional[dict] = None,
                    optim_state: Optional[dict] = None) -> None:
    Path(path).write_bytes(dumps(model, extra, optim_state))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                f"{len(self.data) - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def loads(data: bytes) -> tuple[TransformerModel, dict, dict]:
    """Returns the model, the JSON header, and any non-parameter tensors."""
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError("not a GFTC checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (n,) = r.unpack("<Q", "header length")
    try:
        header = json.loads(r.take(n, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    model = build_model(ModelConfig.from_dict(header["model_config"]))
    params = dict(model.named_parameters())
    seen, extras = set(), {}
    while not r.exhausted:
        (n,) = r.unpack("<I", "name length")
        name = r.take(n, "tensor name").decode("utf-8")
        (rank,) = r.unpack("<I", f"rank of {name}")
        shape = r.unpack(f"<{rank}Q", f"dims of {name}")
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * count, f"payload of {name}"), dtype="<f4")
        arr = arr.astype(np.float64).reshape(shape)
        if name in params:
            if tuple(shape) != params[name].shape:
                raise ShapeMismatchError(
                    f"{name}: stored shape {tuple(shape)} != configured {params[name].shape}")
            params[name].data = arr
            seen.add(name)
        else:
            extras[name] = arr
    missing = [name for name in params if name not in seen]
    if missing:
        raise TruncatedCheckpointError(f"checkpoint ends before {len(missing)} tensors, first {missing[0]}")
    return model, header, extras


def load_checkpoint(path) -> TransformerModel:
    return loads(Path(path).read_bytes())[0]


def load_checkpoint_full(path) -> tuple[TransformerModel, dict, dict]:
    return loads(Path(path).read_bytes())
