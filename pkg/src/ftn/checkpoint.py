"""The "FTN1" tensor checkpoint format.

Layout, all integers u32 little-endian::

    b"FTN1" | count | { name_len | utf-8 name | rank | extents... | float32 LE data }*
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"FTN1"


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ValueError("not an FTN1 checkpoint (bad magic)")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        out[name] = arr.astype(np.float32)
    if pos != len(buf):
        raise ValueError(f"trailing bytes in checkpoint ({len(buf) - pos})")
    return out


def state_dict(module) -> dict[str, np.ndarray]:
    """Parameters then batch-norm buffers, in module traversal order."""
    state = {name: p.data for name, p in module.named_parameters()}
    for name, buf in module.named_buffers():
        state[name] = buf
    return state


def load_state_dict(module, state: Mapping[str, np.ndarray]) -> None:
    params = dict(module.named_parameters())
    buffers = dict(module.named_buffers())
    expected = set(params) | set(buffers)
    if set(state) != expected:
        missing = sorted(expected - set(state))
        extra = sorted(set(state) - expected)
        raise KeyError(f"checkpoint mismatch: missing={missing[:5]} unexpected={extra[:5]}")
    for name, arr in state.items():
        if name in params:
            p = params[name]
            if p.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr
        else:
            buffers[name][...] = arr


def save(module, path) -> None:
    Path(path).write_bytes(encode(state_dict(module)))


def load(module, path) -> None:
    load_state_dict(module, decode(Path(path).read_bytes()))
