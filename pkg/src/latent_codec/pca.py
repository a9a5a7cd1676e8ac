"""Patch principal-components encoder/decoder.

Each non-overlapping f x f RGB patch (scaled to [0, 1]) is vectorized to
length 3*f*f, centered on the training mean and projected onto c orthonormal
principal directions; one patch becomes one latent grid cell. The model
reproduces the latent layouts of the large pretrained autoencoders at desk
scale, it does not reproduce their weights.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    BadMagicError,
    CorruptPayloadError,
    DegenerateDataError,
    LayoutMismatchError,
    TruncatedPayloadError,
    UnsupportedFormatError,
    ValidationError,
)
from .images import ImageBuffer
from .latents import LatentLayout, LatentTensor, _encode_model_id, latent_grid_for_image

PCA_MAGIC = b"PCA1"
PCA_VERSION = 1
_PCA_HEADER = struct.Struct("<4sBIII16s")

DEFAULT_MAX_PATCHES = 1 << 17

_ORTHO_TOL = 1e-5
_VARIANCE_FLOOR = 1e-12


class LinearCodecModel:
    """Mean and orthonormal principal directions for one latent layout."""

    __slots__ = ("layout", "mean", "components", "train_stats")

    def __init__(self, layout: LatentLayout, mean: np.ndarray, components: np.ndarray,
                 train_stats: tuple[int, float] = (0, 0.0)):
        patch_dim = 3 * layout.factor * layout.factor
        if layout.channels > patch_dim:
            raise ValidationError(
                f"channels {layout.channels} exceeds patch dim {patch_dim}"
            )
        mean = np.array(mean, dtype=np.float32, copy=True)
        comp = np.array(components, dtype=np.float32, order="C", copy=True)
        if mean.shape != (patch_dim,):
            raise ValidationError(f"mean must have shape ({patch_dim},), got {mean.shape}")
        if comp.shape != (layout.channels, patch_dim):
            raise ValidationError(
                f"components must have shape ({layout.channels}, {patch_dim}), got {comp.shape}"
            )
        if not (np.isfinite(mean).all() and np.isfinite(comp).all()):
            raise ValidationError("model weights must be finite")
        gram = comp.astype(np.float64) @ comp.astype(np.float64).T
        if np.abs(gram - np.eye(layout.channels)).max() > _ORTHO_TOL:
            raise ValidationError("component rows are not orthonormal within 1e-5")
        mean.flags.writeable = False
        comp.flags.writeable = False
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "train_stats", (int(train_stats[0]), float(train_stats[1])))

    def __setattr__(self, name, value):
        raise AttributeError("LinearCodecModel is immutable")

    @property
    def patch_dim(self) -> int:
        return 3 * self.layout.factor * self.layout.factor

    @property
    def retained_variance(self) -> float:
        return self.train_stats[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearCodecModel):
            return NotImplemented
        return (
            self.layout == other.layout
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.components, other.components)
        )

    def __repr__(self) -> str:
        return f"LinearCodecModel(layout={self.layout!r}, retained={self.retained_variance:.4f})"


def _unit_pixels(image: ImageBuffer) -> np.ndarray:
    return image.pixels.astype(np.float64) / 255.0


def _pad_reflect(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    # np.pad caps reflection at the current size, so loop for tiny inputs
    out = arr
    while out.shape[0] < target_h or out.shape[1] < target_w:
        ph = min(target_h - out.shape[0], out.shape[0])
        pw = min(target_w - out.shape[1], out.shape[1])
        out = np.pad(out, ((0, ph), (0, pw), (0, 0)), mode="symmetric")
    return out


def _patch_matrix(unit: np.ndarray, factor: int) -> np.ndarray:
    """Rows are vectorized f x f RGB patches in raster order."""
    h = unit.shape[0] // factor
    w = unit.shape[1] // factor
    tiled = unit.reshape(h, factor, w, factor, 3).transpose(0, 2, 1, 3, 4)
    return tiled.reshape(h * w, 3 * factor * factor)


def fit_linear_codec(images: list[ImageBuffer], layout: LatentLayout, *,
                     seed: int = 0, max_patches: int = DEFAULT_MAX_PATCHES) -> LinearCodecModel:
    """Fit mean and top-c principal directions on patches drawn from images.

    Patches beyond max_patches are dropped by a seeded uniform subsample.
    The eigen-decomposition is deterministic and each component row is
    sign-fixed so its largest-magnitude coordinate is positive.
    """
    if not images:
        raise ValidationError("fit_linear_codec needs at least one image")
    if max_patches < 1:
        raise ValidationError("max_patches must be positive")
    f = layout.factor
    c = layout.channels
    patch_dim = 3 * f * f
    if c > patch_dim:
        raise ValidationError(f"channels {c} exceeds patch dim {patch_dim} for factor {f}")

    grids = [latent_grid_for_image(layout, img.dims) for img in images]
    counts = [h * w for h, w in grids]
    total = sum(counts)
    if total < c + 1:
        raise ValidationError(f"need at least {c + 1} training patches, images yield {total}")

    keep = None
    if total > max_patches:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(total, size=max_patches, replace=False))

    s1 = np.zeros(patch_dim)
    s2 = np.zeros((patch_dim, patch_dim))
    used = 0
    base = 0
    for img, (h, w), n in zip(images, grids, counts):
        unit = _pad_reflect(_unit_pixels(img), h * f, w * f)
        patches = _patch_matrix(unit, f)
        if keep is not None:
            lo = np.searchsorted(keep, base)
            hi = np.searchsorted(keep, base + n)
            patches = patches[keep[lo:hi] - base]
        base += n
        if patches.shape[0] == 0:
            continue
        s1 += patches.sum(axis=0)
        s2 += patches.T @ patches
        used += patches.shape[0]
    if used < c + 1:
        raise ValidationError(f"need at least {c + 1} training patches, subsample left {used}")

    mean = s1 / used
    cov = s2 / used - np.outer(mean, mean)
    cov = (cov + cov.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    total_var = float(eigvals.sum())
    if total_var < _VARIANCE_FLOOR:
        raise DegenerateDataError("training patches have no variance (constant images?)")

    order = np.arange(patch_dim - 1, patch_dim - 1 - c, -1)
    components = eigvecs[:, order].T.copy()
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    retained = float(eigvals[order].sum() / total_var)

    return LinearCodecModel(
        layout=layout,
        mean=mean.astype(np.float32),
        components=components.astype(np.float32),
        train_stats=(used, retained),
    )


def encode(model: LinearCodecModel, image: ImageBuffer) -> LatentTensor:
    """Project each patch onto the principal directions; one patch per grid cell."""
    f = model.layout.factor
    h, w = latent_grid_for_image(model.layout, image.dims)
    unit = _pad_reflect(_unit_pixels(image), h * f, w * f)
    patches = _patch_matrix(unit, f)
    z = (patches - model.mean.astype(np.float64)) @ model.components.astype(np.float64).T
    values = z.reshape(h, w, model.layout.channels).transpose(2, 0, 1)
    return LatentTensor(model.layout, values.astype(np.float32))


def decode(model: LinearCodecModel, latent: LatentTensor,
           out_dims: tuple[int, int]) -> ImageBuffer:
    """Reconstruct pixels from a latent grid and crop to the requested dims."""
    if latent.layout != model.layout:
        raise LayoutMismatchError(
            f"latent layout {latent.layout} does not match model layout {model.layout}"
        )
    H, W = out_dims
    if latent_grid_for_image(model.layout, (H, W)) != latent.grid:
        raise ValidationError(
            f"latent grid {latent.grid} cannot produce a {H}x{W} image at factor "
            f"{model.layout.factor}"
        )
    f = model.layout.factor
    h, w = latent.grid
    z = latent.values.transpose(1, 2, 0).reshape(h * w, latent.channels).astype(np.float64)
    patches = z @ model.components.astype(np.float64) + model.mean.astype(np.float64)
    np.clip(patches, 0.0, 1.0, out=patches)
    canvas = patches.reshape(h, w, f, f, 3).transpose(0, 2, 1, 3, 4).reshape(h * f, w * f, 3)
    pixels = np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)
    return ImageBuffer(pixels[:H, :W])


def write_model(model: LinearCodecModel) -> bytes:
    """Serialize to PCA1 bytes: header, mean, then component rows (f32le)."""
    header = _PCA_HEADER.pack(
        PCA_MAGIC,
        PCA_VERSION,
        model.layout.factor,
        model.layout.channels,
        model.patch_dim,
        _encode_model_id(model.layout.model_id),
    )
    return (
        header
        + model.mean.astype("<f4", copy=False).tobytes()
        + model.components.astype("<f4", copy=False).tobytes()
    )


def read_model(data: bytes) -> LinearCodecModel:
    """Parse PCA1 bytes; training statistics are not stored in the file."""
    if len(data) < _PCA_HEADER.size:
        raise TruncatedPayloadError("PCA1 header truncated")
    magic, version, factor, channels, patch_dim, model_id_raw = _PCA_HEADER.unpack_from(data)
    if magic != PCA_MAGIC:
        raise BadMagicError(f"bad PCA1 magic {magic!r}")
    if version != PCA_VERSION:
        raise UnsupportedFormatError(f"unsupported PCA1 version {version}")
    try:
        layout = LatentLayout(
            factor=factor,
            channels=channels,
            model_id=model_id_raw.rstrip(b"\x00").decode("utf-8"),
        )
    except (UnicodeDecodeError, ValidationError) as exc:
        raise CorruptPayloadError(f"invalid PCA1 header: {exc}") from exc
    if patch_dim != 3 * factor * factor:
        raise CorruptPayloadError(
            f"declared patch dim {patch_dim} != 3*{factor}^2"
        )
    expected = (patch_dim + channels * patch_dim) * 4
    payload = data[_PCA_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"PCA1 payload declares {expected} bytes, got {len(payload)}")
    if len(payload) > expected:
        raise UnsupportedFormatError(
            f"{len(payload) - expected} trailing bytes after PCA1 payload"
        )
    mean = np.frombuffer(payload, dtype="<f4", count=patch_dim)
    components = np.frombuffer(payload, dtype="<f4", offset=patch_dim * 4).reshape(
        channels, patch_dim
    )
    try:
        return LinearCodecModel(layout, mean, components)
    except ValidationError as exc:
        raise CorruptPayloadError(f"invalid PCA1 payload: {exc}") from exc
