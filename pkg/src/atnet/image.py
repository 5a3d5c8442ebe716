"""Image container and 8-bit file I/O.

Images are H x W x C float64 arrays with values in [0, 1] and RGB channel
order.  Files are read from 8-bit PNG or JPEG; writes are PNG only so the
save/load round trip is lossless up to quantization.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PilImage

MIN_SIDE = 8


@dataclass(frozen=True, eq=False)
class Image:
    """Validated image: H x W x C float64 in [0, 1], C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"image data must be HxWxC, got shape {data.shape}")
        h, w, c = data.shape
        if c not in (1, 3):
            raise ValueError(f"image must have 1 or 3 channels, got {c}")
        if h < MIN_SIDE or w < MIN_SIDE:
            raise ValueError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        if data.size == 0:
            raise ValueError("image is empty")
        lo, hi = float(data.min()), float(data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"image values must lie in [0, 1], got [{lo}, {hi}]")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def to_uint8(self) -> np.ndarray:
        """Quantize to 8 bits: round(v * 255) with half-up rounding."""
        return np.floor(self.data * 255.0 + 0.5).astype(np.uint8)

    def to_rgb(self) -> "Image":
        if self.channels == 3:
            return self
        return Image(np.repeat(self.data, 3, axis=2))

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "Image":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)


def load_image(path) -> Image:
    """Load an 8-bit grayscale or RGB PNG/JPEG file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image file: {path}")
    with _PilImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            raise ValueError(
                f"unsupported image mode {im.mode!r} in {path} (need 8-bit grayscale or RGB)"
            )
        arr = np.asarray(im, dtype=np.uint8)
    return Image.from_uint8(arr)


def save_image(img: Image, path) -> None:
    """Write an image as 8-bit PNG (the only supported write format)."""
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise ValueError(f"only PNG writes are supported, got {path.suffix!r}")
    arr = img.to_uint8()
    if img.channels == 1:
        pil = _PilImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = _PilImage.fromarray(arr, mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def image_to_nchw(img: Image) -> np.ndarray:
    """Single image to a (1, C, H, W) float64 batch."""
    return np.ascontiguousarray(img.data.transpose(2, 0, 1))[None, :, :, :]


def nchw_to_image(batch: np.ndarray, index: int = 0) -> Image:
    """One sample of a (N, C, H, W) batch back to an Image (values clipped)."""
    arr = np.asarray(batch)[index].transpose(1, 2, 0)
    return Image(np.clip(arr, 0.0, 1.0))


def images_to_batch(images) -> np.ndarray:
    """Stack same-shaped images into an (N, C, H, W) float64 batch."""
    return np.ascontiguousarray(np.stack([im.data.transpose(2, 0, 1) for im in images]))
