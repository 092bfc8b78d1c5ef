"""PNG I/O for images, indexed label masks (255 = ignore) and 8-bit saliency maps."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from src.validation import DataError


def _voc_palette() -> list[int]:
    palette = []
    for index in range(256):
        r = g = b = 0
        c = index
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        palette += [r, g, b]
    palette[255 * 3: 256 * 3] = [224, 224, 192]
    return palette


PALETTE = _voc_palette()


def write_mask(path: str | Path, mask: np.ndarray) -> Path:
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    if mask.ndim != 2:
        raise ValueError(f"write_mask expects [H, W], got {mask.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.frombytes("P", (mask.shape[1], mask.shape[0]), mask.tobytes())
    img.putpalette(PALETTE)
    img.save(path, format="PNG")
    return path


def read_mask(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode not in ("P", "L"):
                raise DataError(f"{path}: mask must be an indexed or grayscale PNG, got mode {img.mode}")
            return np.array(img, dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise DataError(f"Failed to read mask {path}: {e}") from e


def write_image(path: str | Path, image: torch.Tensor) -> Path:
    """[3, H, W] in [0, 1] -> 8-bit RGB PNG."""
    array = (image.detach().clamp(0, 1) * 255).round().to(torch.uint8).permute(1, 2, 0).cpu().numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(array), mode="RGB").save(path, format="PNG")
    return path


def read_image(path: str | Path) -> torch.Tensor:
    path = Path(path)
    try:
        with Image.open(path) as img:
            array = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as e:
        raise DataError(f"Failed to decode image {path}: {e}") from e
    return torch.from_numpy(array.copy()).permute(2, 0, 1).contiguous()


def write_gray(path: str | Path, values: np.ndarray) -> Path:
    """[H, W] in [0, 1] quantized as round(v * 255) into a grayscale PNG."""
    array = np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array, mode="L").save(path, format="PNG")
    return path
