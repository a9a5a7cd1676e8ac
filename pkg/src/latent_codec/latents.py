"""Latent grid data model, layout arithmetic, and the LIF interchange format.

A latent is a c x h x w grid of 32-bit reals produced by an encoder that
downsamples the image by a spatial factor f. LIF files move latents between
this package and external encoders; the layout is fixed-width and
little-endian so any language can parse it:

    magic "LIF1" | u8 version=1 | u8 dtype (0 = f32le) | u16 reserved=0
    | u32 channels | u32 height | u32 width | u32 factor
    | 16-byte model_id (UTF-8, zero padded) | payload, channel-major f32le
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    CorruptPayloadError,
    NonFiniteValueError,
    SizeOverflowError,
    TruncatedPayloadError,
    UnsupportedFormatError,
    ValidationError,
)

LIF_MAGIC = b"LIF1"
LIF_VERSION = 1
LIF_DTYPE_F32 = 0
_LIF_HEADER = struct.Struct("<4sBBHIIII16s")

MODEL_ID_BYTES = 16

# Quantization payload modes shared with the container module.
RAW_F32 = "raw-f32"
STATIC_INT8 = "static-int8"
KMEANS_8BIT = "kmeans-8bit"
QUANT_MODES = (RAW_F32, STATIC_INT8, KMEANS_8BIT)

_MAX_BYTE_SIZE = 2**63 - 1

# (factor, channels) of the autoencoder families this codec mirrors.
LAYOUT_PRESETS = {
    "sd15-like": (8, 4),
    "sd3-like": (8, 16),
    "dcae-like": (32, 32),
}


def _encode_model_id(model_id: str) -> bytes:
    raw = model_id.encode("utf-8")
    if len(raw) > MODEL_ID_BYTES:
        raise ValidationError(f"model_id {model_id!r} exceeds {MODEL_ID_BYTES} UTF-8 bytes")
    if b"\x00" in raw:
        raise ValidationError("model_id must not contain NUL bytes")
    return raw.ljust(MODEL_ID_BYTES, b"\x00")


@dataclass(frozen=True)
class LatentLayout:
    """Spatial downsample factor and channel count of a latent grid."""

    factor: int
    channels: int
    model_id: str = ""

    def __post_init__(self):
        if not 1 <= self.factor <= 256:
            raise ValidationError(f"factor {self.factor} outside [1, 256]")
        if not 1 <= self.channels <= 1024:
            raise ValidationError(f"channels {self.channels} outside [1, 1024]")
        _encode_model_id(self.model_id)

    @classmethod
    def preset(cls, name: str) -> "LatentLayout":
        try:
            factor, channels = LAYOUT_PRESETS[name]
        except KeyError:
            raise ValidationError(
                f"unknown layout preset {name!r}; choices: {sorted(LAYOUT_PRESETS)}"
            ) from None
        return cls(factor=factor, channels=channels, model_id=name)


def _check_finite(values: np.ndarray) -> None:
    if not np.isfinite(values).all():
        raise NonFiniteValueError("latent values must be finite (no NaN/Inf)")


class LatentTensor:
    """Immutable c x h x w grid of float32 latent activations."""

    __slots__ = ("layout", "values")

    def __init__(self, layout: LatentLayout, values: np.ndarray):
        arr = np.array(values, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 3:
            raise ValidationError(f"latent values must be 3-D (c, h, w), got ndim={arr.ndim}")
        if arr.shape[0] != layout.channels:
            raise ValidationError(
                f"values have {arr.shape[0]} channels, layout declares {layout.channels}"
            )
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValidationError("latent grid must have positive height and width")
        _check_finite(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("LatentTensor is immutable")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def grid(self) -> tuple[int, int]:
        return (self.height, self.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatentTensor):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return (
            f"LatentTensor(layout={self.layout!r}, "
            f"shape={self.values.shape})"
        )


def latent_byte_size(layout: LatentLayout, grid: tuple[int, int], mode: str) -> int:
    """Payload bytes of one latent grid, excluding any container framing.

    Raw 32-bit storage costs c*h*w*4; both 8-bit modes cost c*h*w.
    """
    h, w = grid
    if h < 1 or w < 1:
        raise ValidationError(f"grid dims must be positive, got {grid}")
    if mode not in QUANT_MODES:
        raise ValidationError(f"unknown quant mode {mode!r}; choices: {QUANT_MODES}")
    per_value = 4 if mode == RAW_F32 else 1
    size = layout.channels * h * w * per_value
    if size > _MAX_BYTE_SIZE:
        raise SizeOverflowError(f"latent payload of {size} bytes exceeds supported range")
    return size


def latent_grid_for_image(layout: LatentLayout, image_dims: tuple[int, int]) -> tuple[int, int]:
    """Latent grid (h, w) covering an H x W image: ceiling division by the factor."""
    H, W = image_dims
    if H < 1 or W < 1:
        raise ValidationError(f"image dims must be positive, got {image_dims}")
    f = layout.factor
    return (-(-H // f), -(-W // f))


def write_lif(tensor: LatentTensor) -> bytes:
    """Serialize a latent tensor to LIF bytes (bit-exact roundtrip with read_lif)."""
    _check_finite(tensor.values)
    header = _LIF_HEADER.pack(
        LIF_MAGIC,
        LIF_VERSION,
        LIF_DTYPE_F32,
        0,
        tensor.channels,
        tensor.height,
        tensor.width,
        tensor.layout.factor,
        _encode_model_id(tensor.layout.model_id),
    )
    return header + tensor.values.astype("<f4", copy=False).tobytes()


def read_lif(data: bytes) -> LatentTensor:
    """Parse LIF bytes back into a LatentTensor."""
    if len(data) < _LIF_HEADER.size:
        raise TruncatedPayloadError(
            f"LIF header needs {_LIF_HEADER.size} bytes, got {len(data)}"
        )
    magic, version, dtype, reserved, channels, height, width, factor, model_id_raw = (
        _LIF_HEADER.unpack_from(data)
    )
    if magic != LIF_MAGIC:
        raise BadMagicError(f"bad LIF magic {magic!r}")
    if version != LIF_VERSION:
        raise UnsupportedFormatError(f"unsupported LIF version {version}")
    if dtype != LIF_DTYPE_F32:
        raise UnsupportedFormatError(f"unsupported LIF dtype {dtype}")
    if reserved != 0:
        raise UnsupportedFormatError(f"nonzero reserved field {reserved}")
    try:
        model_id = model_id_raw.rstrip(b"\x00").decode("utf-8")
        layout = LatentLayout(factor=factor, channels=channels, model_id=model_id)
    except (UnicodeDecodeError, ValidationError) as exc:
        raise CorruptPayloadError(f"invalid LIF header: {exc}") from exc
    expected = channels * height * width * 4
    payload = data[_LIF_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"LIF payload declares {expected} bytes, got {len(payload)}"
        )
    if len(payload) > expected:
        raise UnsupportedFormatError(
            f"{len(payload) - expected} trailing bytes after LIF payload"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(channels, height, width)
    try:
        return LatentTensor(layout, values)
    except (ValidationError, NonFiniteValueError) as exc:
        raise CorruptPayloadError(f"invalid LIF payload: {exc}") from exc
