"""8-bit RGB image buffers and PNG/PPM file I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError


class ImageBuffer:
    """Immutable h x w x 3 uint8 RGB image."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"pixels must be (h, w, 3), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("image dims must be positive")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValidationError(f"pixels must be 8-bit integers, got dtype {arr.dtype}")
            if arr.min() < 0 or arr.max() > 255:
                raise ValidationError("pixel intensities outside [0, 255]")
        arr = np.array(arr, dtype=np.uint8, order="C", copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ImageBuffer is immutable")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return (self.height, self.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __repr__(self) -> str:
        return f"ImageBuffer({self.height}x{self.width})"


_SUFFIXES = {".png": "PNG", ".ppm": "PPM"}


def read_image(path: str | Path) -> ImageBuffer:
    """Load an 8-bit RGB image from a PNG or binary PPM file."""
    path = Path(path)
    if path.suffix.lower() not in _SUFFIXES:
        raise ValidationError(f"unsupported image suffix {path.suffix!r} (PNG/PPM only)")
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return ImageBuffer(np.asarray(rgb))


def write_image(image: ImageBuffer, path: str | Path) -> None:
    """Write an image as PNG or binary PPM, chosen by file suffix."""
    path = Path(path)
    fmt = _SUFFIXES.get(path.suffix.lower())
    if fmt is None:
        raise ValidationError(f"unsupported image suffix {path.suffix!r} (PNG/PPM only)")
    Image.fromarray(image.pixels, mode="RGB").save(path, format=fmt)
