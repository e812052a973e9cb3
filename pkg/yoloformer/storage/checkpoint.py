"""
Binary checkpoint codec.

Layout (all integers u32 little-endian):

    b"YFCK" | version | count | count x (name_len | name utf-8 | rank | extents... | f32 LE data)

Tensors are written in state-dict order, so save -> load -> save is byte-identical.
"""
import logging
import os
import struct
from collections import OrderedDict
from typing import Dict, Mapping

import numpy as np

from yoloformer.utils.exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"YFCK"
VERSION = 1


def encode_checkpoint(state: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, value in state.items():
        array = np.asarray(value)
        if array.dtype.kind not in "fiub":
            raise CheckpointError(f"{name}: cannot store dtype {array.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes, path: str = None) -> "OrderedDict[str, np.ndarray]":
    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise CheckpointError("truncated checkpoint", path=path)
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    offset = 0
    if take(4) != MAGIC:
        raise CheckpointError("not a YFCK checkpoint (bad magic)", path=path)
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", path=path)

    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(take(4 * size), dtype="<f4").astype(np.float32)
        state[name] = values.reshape(shape)
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after {count} tensors", path=path)
    return state


def save_checkpoint(path: str, state: Mapping[str, np.ndarray], extras: Dict[str, float] = None):
    """Write ``state`` (plus scalar ``meta.*`` extras) atomically"""
    full = OrderedDict(state)
    for key, value in (extras or {}).items():
        full[f"meta.{key}"] = np.asarray(value, dtype=np.float32)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(encode_checkpoint(full))
    os.replace(tmp, path)
    logger.info("Saved checkpoint %s (%d tensors)", path, len(full))


def load_checkpoint(path: str) -> "OrderedDict[str, np.ndarray]":
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}", path=path)
    with open(path, "rb") as f:
        state = decode_checkpoint(f.read(), path)
    logger.info("Loaded checkpoint %s (%d tensors)", path, len(state))
    return state


def split_meta(state: Mapping[str, np.ndarray]):
    """Separate model tensors from ``meta.*`` scalars"""
    model = OrderedDict((k, v) for k, v in state.items() if not k.startswith("meta."))
    meta = {k[len("meta."):]: float(np.asarray(v).reshape(-1)[0]) for k, v in state.items() if k.startswith("meta.")}
    return model, meta
