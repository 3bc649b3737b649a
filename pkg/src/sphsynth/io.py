"""Raster and manifest files.

Depth maps are single-channel portable float maps (``Pf``), always written
little-endian (negative scale) and returned top-down.  Color images are 8-bit
PNG/PPM through Pillow.  Rig manifests are plain ``key = value`` text.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

_PFM_HEADER = re.compile(rb"^(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def write_pfm(path, data) -> None:
    """Write a float32 map; 2-D arrays become ``Pf``, ``(h, w, 3)`` arrays ``PF``."""
    arr = np.asarray(data)
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM needs (h, w) or (h, w, 3) data, got shape {arr.shape}")
    h, w = arr.shape[:2]
    # PFM stores rows bottom-up
    body = np.ascontiguousarray(arr[::-1], dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(body.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a top-down float32 array."""
    raw = Path(path).read_bytes()
    m = _PFM_HEADER.match(raw)
    if m is None:
        raise ValueError(f"{path}: not a PFM file")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if tag == b"PF" else 1
    if scale == 0:
        raise ValueError(f"{path}: PFM scale must be nonzero")
    dtype = np.dtype("<f4" if scale < 0 else ">f4")
    count = w * h * channels
    payload = raw[m.end():]
    if len(payload) < count * 4:
        raise ValueError(f"{path}: truncated PFM payload ({len(payload)} bytes, need {count * 4})")
    arr = np.frombuffer(payload, dtype=dtype, count=count).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return arr.reshape(shape)[::-1].copy()


def to_uint8(color) -> np.ndarray:
    return np.clip(np.rint(np.asarray(color, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_color(path, color) -> None:
    """Save an ``(h, w, 3)`` image in [0, 1] as 8-bit; format follows the suffix."""
    Image.fromarray(to_uint8(color), mode="RGB").save(path)


def write_mask(path, mask) -> None:
    Image.fromarray(np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8), mode="L").save(path)


def read_color(path) -> np.ndarray:
    """Load an 8-bit image as float64 RGB in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_manifest(path, entries: dict) -> None:
    lines = [f"{key} = {value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out
