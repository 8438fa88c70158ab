"""Binary parameter checkpoints.

Layout (little-endian)::

    b"EGNW" | sha256(config text) [32 bytes] | tensor count u32
    per tensor: name length u16 | utf-8 name | dtype code u8 | rank u8 | dims u32 * rank | payload

The config text travels as a uint8 tensor named ``__config__`` so one file is
enough to rebuild the model.
"""
import hashlib
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"EGNW"
CONFIG_KEY = "__config__"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1"), 3: np.dtype("<i8")}
_CODES = {v.str: k for k, v in _DTYPES.items()}


def config_hash(config_text: str) -> bytes:
    return hashlib.sha256(config_text.encode("utf-8")).digest()


def save_checkpoint(path, tensors: dict, config_text: str) -> None:
    items = [(CONFIG_KEY, np.frombuffer(config_text.encode("utf-8"), dtype=np.uint8))]
    items += list(tensors.items())
    out = [MAGIC, config_hash(config_text), struct.pack("<I", len(items))]
    for name, arr in items:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        code = _CODES.get(np.dtype(dt).str)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path):
    """Return ``(tensors, config_text)``; raises CheckpointError on any corruption."""
    blob = Path(path).read_bytes()
    if len(blob) < 40 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    digest = blob[4:36]
    (count,) = struct.unpack_from("<I", blob, 36)
    pos = 40
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, rank = struct.unpack_from("<BB", blob, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            dt = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(blob):
                raise CheckpointError(f"{path}: tensor {name!r} truncated")
            tensors[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize,
                                          offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if CONFIG_KEY not in tensors:
        raise CheckpointError(f"{path}: missing embedded config")
    config_text = tensors.pop(CONFIG_KEY).tobytes().decode("utf-8")
    if config_hash(config_text) != digest:
        raise CheckpointError(f"{path}: config hash mismatch")
    return tensors, config_text
