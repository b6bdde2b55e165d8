"""8-bit PNG export/import for rendered images.

Export clamps to [0, 1] and rounds half-up to uint8; import maps back to
float64 in [0, 1]. This is the only place pixel values are quantized.
"""

from pathlib import Path

import numpy as np
from PIL import Image as PILImage


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0,1] and round half-up to uint8."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    clamped = np.clip(img, 0.0, 1.0)
    return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)


def write_png(path, img: np.ndarray):
    """Quantize and write an (H, W, 3) float image as 8-bit RGB PNG."""
    PILImage.fromarray(quantize(img), mode="RGB").save(str(path), format="PNG")


def read_png(path) -> np.ndarray:
    """Read an RGB PNG into a float64 (H, W, 3) array in [0, 1]."""
    path = Path(path)
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0
