"""Binary tensor files.

Layout (all little-endian)::

    offset 0   b"DSPE"        magic
    offset 4   u8             version (1)
    offset 5   u8             rank
    offset 6   u32 * rank     dims
    then       f32 * prod     payload, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DSPE"
VERSION = 1
MAX_RANK = 8
MAX_ELEMENTS = 1 << 31


class TensorFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def encode_tensor(tensor: np.ndarray) -> bytes:
    arr = np.asarray(tensor, dtype="<f4")
    if arr.ndim > MAX_RANK:
        raise ValueError(f"rank {arr.ndim} exceeds {MAX_RANK}")
    head = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 4 or data[:4] != MAGIC:
        raise TensorFormatError("bad magic", 0)
    if len(data) < 6:
        raise TensorFormatError("truncated header", len(data))
    version, rank = data[4], data[5]
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}", 4)
    if rank > MAX_RANK:
        raise TensorFormatError(f"rank {rank} exceeds {MAX_RANK}", 5)
    dims_end = 6 + 4 * rank
    if len(data) < dims_end:
        raise TensorFormatError("truncated dims", len(data))
    dims = struct.unpack(f"<{rank}I", data[6:dims_end])
    count = 1
    for i, d in enumerate(dims):
        count *= d
        if count > MAX_ELEMENTS:
            raise TensorFormatError("dims overflow element limit", 6 + 4 * i)
    need = dims_end + 4 * count
    if len(data) < need:
        raise TensorFormatError(f"payload truncated: need {need} bytes", len(data))
    if len(data) > need:
        raise TensorFormatError("trailing bytes after payload", need)
    return np.frombuffer(data, dtype="<f4", count=count, offset=dims_end).reshape(dims).copy()


def save_tensor(path: str | Path, tensor: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(tensor))


def load_tensor(path: str | Path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
