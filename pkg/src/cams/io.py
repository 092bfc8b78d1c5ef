"""
CAMS binary format: one file per sample.

    magic   4 bytes  b"CAMS"
    version u16
    C, h, w u32 x 3
    payload C*h*w little-endian float32, C-major
"""

import logging
import struct
from pathlib import Path

import numpy as np
import torch

from src.validation import DataError

logger = logging.getLogger(__name__)

MAGIC = b"CAMS"
VERSION = 1
HEADER = struct.Struct("<4sHIII")
SUFFIX = ".cams"


def save_cams(path: str | Path, maps) -> Path:
    if isinstance(maps, torch.Tensor):
        maps = maps.detach().cpu().numpy()
    array = np.ascontiguousarray(np.asarray(maps), dtype="<f4")
    if array.ndim == 2:
        array = array[np.newaxis]
    if array.ndim != 3:
        raise ValueError(f"save_cams expects [C, h, w] maps, got shape {array.shape}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, *array.shape))
        f.write(array.tobytes())
    return path


def load_cams(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Prior file not found: {path}")
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise DataError(f"{path}: truncated header")

    magic, version, c, h, w = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported CAMS version {version}")
    expected = c * h * w * 4
    if len(data) - HEADER.size != expected:
        raise DataError(f"{path}: payload has {len(data) - HEADER.size} bytes, expected {expected}")

    return np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(c, h, w).astype(np.float32)


def cams_path(directory: str | Path, sample_id: str) -> Path:
    return Path(directory) / f"{sample_id}{SUFFIX}"
