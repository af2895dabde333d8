"""
Imaging module for orojar-lab
Grayscale grids and strips written as PNG
"""
import io
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .utils import atomic_write_bytes

logger = logging.getLogger(__name__)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 8-bit, clipping anything outside the range"""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def as_images(batch: np.ndarray) -> np.ndarray:
    """Drop a singleton channel axis: (N, 1, H, W) -> (N, H, W)"""
    batch = np.asarray(batch)
    if batch.ndim == 4 and batch.shape[1] == 1:
        return batch[:, 0]
    if batch.ndim != 3:
        raise ValueError(f"Expected (N, H, W) or (N, 1, H, W) images, got shape {batch.shape}")
    return batch


def tile_grid(images: np.ndarray, padding: int = 1, pad_value: float = 0.5) -> np.ndarray:
    """Tile a (rows, cols, H, W) array into one 2-D image with padding between cells"""
    if images.ndim != 4:
        raise ValueError(f"Expected (rows, cols, H, W), got shape {images.shape}")
    rows, cols, height, width = images.shape
    canvas = np.full(
        (rows * (height + padding) + padding, cols * (width + padding) + padding),
        pad_value,
        dtype=np.float64,
    )
    for r in range(rows):
        for c in range(cols):
            top = padding + r * (height + padding)
            left = padding + c * (width + padding)
            canvas[top:top + height, left:left + width] = images[r, c]
    return canvas


def save_png(path: Union[str, Path], image: np.ndarray) -> Path:
    buffer = io.BytesIO()
    # 2-D uint8 arrays map to 8-bit grayscale
    Image.fromarray(to_uint8(image)).save(buffer, format="PNG")
    logger.debug(f"Writing {image.shape[1]}x{image.shape[0]} PNG to {path}")
    return atomic_write_bytes(path, buffer.getvalue())


def save_contact_sheet(path: Union[str, Path], images: np.ndarray, columns: int = 8) -> Path:
    """Lay out up to rows*columns images in reading order; empty cells stay background"""
    images = as_images(images)
    count = len(images)
    rows = max(1, -(-count // columns))
    cells = np.zeros((rows * columns,) + images.shape[1:], dtype=np.float64)
    cells[:count] = images
    return save_png(path, tile_grid(cells.reshape(rows, columns, *images.shape[1:])))


def save_strip(path: Union[str, Path], frames: np.ndarray) -> Path:
    """One row of traversal frames"""
    frames = as_images(frames)
    return save_png(path, tile_grid(frames[None]))
