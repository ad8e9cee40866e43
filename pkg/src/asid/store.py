"""Binary weight store.

Layout (all integers little-endian)::

    8 bytes   magic b"ASIDWTS\\0"
    u32       format version
    u32       header length in bytes
    header    UTF-8 JSON: {"config": {...}, "tensors": [{"name", "shape"}, ...]}
    payload   every tensor as float32 LE, concatenated in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptStoreError, DataError
from .network import ASID, ModelConfig

MAGIC = b"ASIDWTS\0"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def encode(model: ASID) -> bytes:
    tensors = [{"name": n, "shape": list(p.shape)} for n, p in model.named_parameters()]
    header = json.dumps({"config": model.config.to_dict(), "tensors": tensors}, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(p.data, dtype="<f4").tobytes() for p in model.parameters())
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + payload


def decode(blob: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    if len(blob) < _PREFIX.size:
        raise CorruptStoreError("weight store truncated before header")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptStoreError("not a weight store (bad magic)")
    if version != VERSION:
        raise CorruptStoreError(f"unsupported weight store version {version}")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise CorruptStoreError("weight store truncated inside header")
    try:
        header = json.loads(blob[start:start + hlen].decode())
        config = ModelConfig.from_dict(header["config"])
        entries = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptStoreError(f"unreadable weight store header: {exc}") from None
    offset = start + hlen
    tensors = {}
    for name, shape in entries:
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(blob):
            raise CorruptStoreError(f"weight store truncated in tensor {name}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CorruptStoreError(f"{len(blob) - offset} trailing bytes after the last tensor")
    return config, tensors


def save(model: ASID, path) -> None:
    Path(path).write_bytes(encode(model))


def load(path, config: ModelConfig | None = None, dtype=np.float32) -> ASID:
    """Rebuild a model from a store; ``config``, if given, must match the stored one."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read weight store {path}: {exc}") from None
    stored, tensors = decode(blob)
    if config is not None and config != stored:
        diff = {k: (v, stored.to_dict()[k]) for k, v in config.to_dict().items() if stored.to_dict()[k] != v}
        raise CorruptStoreError(f"store was written for a different config: {diff}")
    model = ASID(stored)
    names = [n for n, _ in model.named_parameters()]
    if names != list(tensors):
        raise CorruptStoreError("stored tensor names do not match the configured architecture")
    for name, p in model.named_parameters():
        if tensors[name].shape != p.shape:
            raise CorruptStoreError(f"tensor {name}: stored shape {tensors[name].shape} != expected {p.shape}")
        p.data = tensors[name].astype(dtype)
    return model


def read_config(path) -> ModelConfig:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read weight store {path}: {exc}") from None
    return decode(blob)[0]


def payload_elements(path) -> int:
    _, tensors = decode(Path(path).read_bytes())
    return sum(t.size for t in tensors.values())
