"""8-bit raster images and the deterministic pixel transforms used by the
preprocessing stage.

All rounding is half-up (floor(x + 0.5)) so results are identical across
platforms and runs; Python's bankers rounding is never used on pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError, GeometryError


@dataclass(frozen=True)
class RasterImage:
    """Row-major 8-bit samples; channels is 1 (grayscale) or 3 (RGB)."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise GeometryError(f"channels must be 1 or 3, got {self.channels}")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"dimensions must be positive: {self.width}x{self.height}")
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise GeometryError(f"sample count {len(self.data)} != {expected}")

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(
            self.height, self.width, self.channels
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.dtype != np.uint8:
            raise GeometryError(f"expected uint8 samples, got {arr.dtype}")
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, data=arr.tobytes())


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0, 255).astype(np.uint8)


def adjust_brightness(img: RasterImage, factor: float) -> RasterImage:
    arr = img.to_array().astype(np.float64)
    return RasterImage.from_array(_to_u8(_round_half_up(arr * factor)))


def adjust_contrast(img: RasterImage, factor: float) -> RasterImage:
    """Pivot-128 contrast: v <- (v - 128) * factor + 128."""
    arr = img.to_array().astype(np.float64)
    return RasterImage.from_array(_to_u8(_round_half_up((arr - 128.0) * factor + 128.0)))


def box_blur(img: RasterImage, kernel: int) -> RasterImage:
    """Box-mean filter with edge-replicate padding."""
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return img
    r = kernel // 2
    arr = img.to_array().astype(np.float64)
    padded = np.pad(arr, ((r, r), (r, r), (0, 0)), mode="edge")
    h, w = img.height, img.width
    acc = np.zeros_like(arr)
    for dy in range(kernel):
        for dx in range(kernel):
            acc += padded[dy : dy + h, dx : dx + w]
    # integer sums are exact in float64, and sum/k^2 is never exactly
    # halfway for odd kernels, so half-up rounding is unambiguous
    return RasterImage.from_array(_to_u8(_round_half_up(acc / (kernel * kernel))))


def to_grayscale(img: RasterImage) -> RasterImage:
    """Single-channel luma: round(0.299 R + 0.587 G + 0.114 B)."""
    if img.channels == 1:
        return img
    arr = img.to_array().astype(np.float64)
    luma = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    return RasterImage.from_array(_to_u8(_round_half_up(luma)))


def crop(img: RasterImage, x0: int, y0: int, w: int, h: int) -> RasterImage:
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > img.width or y0 + h > img.height:
        raise GeometryError(
            f"crop window ({x0}, {y0}, {w}, {h}) outside image {img.width}x{img.height}"
        )
    arr = img.to_array()[y0 : y0 + h, x0 : x0 + w]
    return RasterImage.from_array(np.ascontiguousarray(arr))


def load_image(path: Path) -> RasterImage:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            mode = "L" if im.mode in ("L", "1", "I;16") else "RGB"
            arr = np.asarray(im.convert(mode), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise DatasetError(f"cannot read image {path}: {e}") from e
    return RasterImage.from_array(arr)


def save_image(img: RasterImage, path: Path) -> None:
    from PIL import Image

    arr = img.to_array()
    if img.channels == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")
