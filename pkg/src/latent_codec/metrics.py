"""Rate-distortion measurement.

Pixel metrics (PSNR, SSIM) are computed in-core. Embedding-space metrics
(cosine similarity, L1 distance) operate on externally supplied foundation
model embeddings; the core never runs the models itself. EEF is the
embedding interchange format:

    magic "EEF1" | u8 version=1 | u8 dtype (0 = f32le) | u16 reserved=0
    | u32 dim | 32-byte embedder_id (UTF-8, zero padded) | dim f32le values
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .container import CompressedContainer, write_container
from .errors import (
    BadMagicError,
    NonFiniteValueError,
    TruncatedPayloadError,
    UnsupportedFormatError,
    ValidationError,
)
from .images import ImageBuffer

PSNR_PEAK = 255.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

EEF_MAGIC = b"EEF1"
EEF_VERSION = 1
EEF_DTYPE_F32 = 0
_EEF_HEADER = struct.Struct("<4sBBHI32s")
EMBEDDER_ID_BYTES = 32


class EmbeddingVector:
    """Immutable k-dimensional foundation model embedding."""

    __slots__ = ("values", "embedder_id")

    def __init__(self, values: np.ndarray, embedder_id: str = ""):
        arr = np.array(values, dtype=np.float32, copy=True).ravel()
        if arr.size < 1:
            raise ValidationError("embedding must have dim >= 1")
        if not np.isfinite(arr).all():
            raise NonFiniteValueError("embedding values must be finite")
        raw = embedder_id.encode("utf-8")
        if len(raw) > EMBEDDER_ID_BYTES or b"\x00" in raw:
            raise ValidationError(
                f"embedder_id must be <= {EMBEDDER_ID_BYTES} UTF-8 bytes without NUL"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "embedder_id", embedder_id)

    def __setattr__(self, name, value):
        raise AttributeError("EmbeddingVector is immutable")

    @property
    def dim(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.embedder_id == other.embedder_id and np.array_equal(
            self.values, other.values
        )


def _check_dims(ref: ImageBuffer, test: ImageBuffer) -> None:
    if ref.dims != test.dims:
        raise ValidationError(f"image dims differ: {ref.dims} vs {test.dims}")


def psnr(ref: ImageBuffer, test: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB; identical images return +inf."""
    _check_dims(ref, test)
    diff = ref.pixels.astype(np.float64) - test.pixels.astype(np.float64)
    mse = float(np.mean(np.square(diff)))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(PSNR_PEAK * PSNR_PEAK / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


_SSIM_KERNEL = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    c1 = (SSIM_K1 * PSNR_PEAK) ** 2
    c2 = (SSIM_K2 * PSNR_PEAK) ** 2
    mu_x = convolve2d(x, _SSIM_KERNEL, mode="valid")
    mu_y = convolve2d(y, _SSIM_KERNEL, mode="valid")
    var_x = convolve2d(x * x, _SSIM_KERNEL, mode="valid") - mu_x * mu_x
    var_y = convolve2d(y * y, _SSIM_KERNEL, mode="valid") - mu_y * mu_y
    cov = convolve2d(x * y, _SSIM_KERNEL, mode="valid") - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(ref: ImageBuffer, test: ImageBuffer) -> float:
    """Mean structural similarity: 11x11 Gaussian window (sigma 1.5), per
    channel, channels averaged."""
    _check_dims(ref, test)
    if ref.height < SSIM_WINDOW or ref.width < SSIM_WINDOW:
        raise ValidationError(
            f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW} px, got {ref.dims}"
        )
    x = ref.pixels.astype(np.float64)
    y = test.pixels.astype(np.float64)
    return float(np.mean([_ssim_channel(x[:, :, c], y[:, :, c]) for c in range(3)]))


def _check_embed_dims(a: EmbeddingVector, b: EmbeddingVector) -> None:
    if a.dim != b.dim:
        raise ValidationError(f"embedding dims differ: {a.dim} vs {b.dim}")


def embed_cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity of two embeddings, clamped to [-1, 1]."""
    _check_embed_dims(a, b)
    av = a.values.astype(np.float64)
    bv = b.values.astype(np.float64)
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity undefined for a zero vector")
    return float(np.clip(np.dot(av, bv) / (na * nb), -1.0, 1.0))


def embed_l1(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Sum of absolute coordinate differences."""
    _check_embed_dims(a, b)
    return float(np.abs(a.values.astype(np.float64) - b.values.astype(np.float64)).sum())


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TileMetrics:
    row: int
    col: int
    payload_bytes: int
    psnr_db: float


@dataclass(frozen=True)
class RateDistortionReport:
    """One compressed image's size and fidelity numbers."""

    payload_bytes: int
    total_bytes: int
    psnr_db: float
    ssim: float
    embed_cosine: float | None
    embed_l1: float | None
    per_tile: tuple[TileMetrics, ...]

    def __post_init__(self):
        if self.payload_bytes > self.total_bytes:
            raise ValidationError("payload_bytes cannot exceed total_bytes")

    def to_dict(self) -> dict:
        out = {
            "payload_bytes": self.payload_bytes,
            "total_bytes": self.total_bytes,
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
        }
        if self.embed_cosine is not None:
            out["embed_cosine"] = self.embed_cosine
        if self.embed_l1 is not None:
            out["embed_l1"] = self.embed_l1
        out["per_tile"] = [
            {"row": t.row, "col": t.col, "payload_bytes": t.payload_bytes, "psnr_db": t.psnr_db}
            for t in self.per_tile
        ]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def build_report(original: ImageBuffer, container: CompressedContainer,
                 reconstruction: ImageBuffer,
                 embeddings: tuple[EmbeddingVector, EmbeddingVector] | None = None,
                 ) -> RateDistortionReport:
    """Assemble sizes, pixel metrics, and optional embedding metrics."""
    _check_dims(original, reconstruction)
    if original.dims != container.image_dims:
        raise ValidationError(
            f"container covers {container.image_dims}, image is {original.dims}"
        )
    payload = container.payload_bytes
    total = len(write_container(container))
    rows, cols = container.grid
    ts = container.tile_size
    per_tile_bytes = payload // (rows * cols)
    per_tile = []
    for r in range(rows):
        for c in range(cols):
            ref = ImageBuffer(original.pixels[r * ts:(r + 1) * ts, c * ts:(c + 1) * ts])
            out = ImageBuffer(reconstruction.pixels[r * ts:(r + 1) * ts, c * ts:(c + 1) * ts])
            per_tile.append(TileMetrics(r, c, per_tile_bytes, psnr(ref, out)))
    cos = l1 = None
    if embeddings is not None:
        cos = embed_cosine(*embeddings)
        l1 = embed_l1(*embeddings)
    return RateDistortionReport(
        payload_bytes=payload,
        total_bytes=total,
        psnr_db=psnr(original, reconstruction),
        ssim=ssim(original, reconstruction),
        embed_cosine=cos,
        embed_l1=l1,
        per_tile=tuple(per_tile),
    )


# ---------------------------------------------------------------------------
# EEF files
# ---------------------------------------------------------------------------

def write_eef(vec: EmbeddingVector) -> bytes:
    """Serialize an embedding to EEF bytes."""
    raw = vec.embedder_id.encode("utf-8").ljust(EMBEDDER_ID_BYTES, b"\x00")
    header = _EEF_HEADER.pack(EEF_MAGIC, EEF_VERSION, EEF_DTYPE_F32, 0, vec.dim, raw)
    return header + vec.values.astype("<f4", copy=False).tobytes()


def read_eef(data: bytes) -> EmbeddingVector:
    """Parse EEF bytes back into an EmbeddingVector."""
    if len(data) < _EEF_HEADER.size:
        raise TruncatedPayloadError("EEF header truncated")
    magic, version, dtype, reserved, dim, ident_raw = _EEF_HEADER.unpack_from(data)
    if magic != EEF_MAGIC:
        raise BadMagicError(f"bad EEF magic {magic!r}")
    if version != EEF_VERSION:
        raise UnsupportedFormatError(f"unsupported EEF version {version}")
    if dtype != EEF_DTYPE_F32:
        raise UnsupportedFormatError(f"unsupported EEF dtype {dtype}")
    if reserved != 0:
        raise UnsupportedFormatError(f"nonzero reserved field {reserved}")
    payload = data[_EEF_HEADER.size:]
    if len(payload) < dim * 4:
        raise TruncatedPayloadError(f"EEF payload declares {dim * 4} bytes, got {len(payload)}")
    if len(payload) > dim * 4:
        raise UnsupportedFormatError(f"{len(payload) - dim * 4} trailing bytes after EEF payload")
    values = np.frombuffer(payload, dtype="<f4")
    return EmbeddingVector(values, ident_raw.rstrip(b"\x00").decode("utf-8"))
