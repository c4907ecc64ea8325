"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def to_uint8(arr: np.ndarray) -> np.ndarray:
    """[0, 1] -> [0, 255], rounding half up."""
    return np.floor(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """``rgb`` is 3 x H x W (or H x W x 3) in [0, 1]."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 3 and rgb.shape[0] == 3 and rgb.shape[2] != 3:
        rgb = rgb.transpose(1, 2, 0)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {rgb.shape}")
    h, w = rgb.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + to_uint8(rgb).tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"expected an H x W map, got shape {gray.shape}")
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + to_uint8(gray).tobytes())


def _read(path, magic: bytes) -> tuple[np.ndarray, int, int]:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic!r} header, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit images supported")
    return np.frombuffer(buf, dtype=np.uint8, offset=pos + 1), h, w


def read_ppm(path) -> np.ndarray:
    """Returns 3 x H x W float32 in [0, 1]."""
    raw, h, w = _read(path, b"P6")
    return (raw.reshape(h, w, 3).transpose(2, 0, 1) / 255.0).astype(np.float32)


def read_pgm(path) -> np.ndarray:
    raw, h, w = _read(path, b"P5")
    return (raw.reshape(h, w) / 255.0).astype(np.float32)
