"""Scalar quantization of latent values.

Two routes to 8-bit storage:

* a codebook of k=256 centroids learned by 1-D K-means over sampled latent
  values, so centroid density follows the (near-zero-concentrated) value
  distribution, and
* static int8 binning: 256 equal-width bins over a calibrated range.

Quantized latents store one unsigned byte per value; dequantization maps
indices back to centroids or bin midpoints.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    CorruptPayloadError,
    DegenerateDataError,
    TruncatedPayloadError,
    ValidationError,
)
from .latents import KMEANS_8BIT, STATIC_INT8, LatentLayout, LatentTensor

SCOPE_GLOBAL = "global"
SCOPE_PER_CHANNEL = "per-channel"
SCOPES = (SCOPE_GLOBAL, SCOPE_PER_CHANNEL)

DEFAULT_K = 256
DEFAULT_MAX_SAMPLES = 1 << 20
DEFAULT_MAX_ITERS = 100
DEFAULT_REL_TOL = 1e-6

# Below this many distinct values the fit uses exact dynamic programming
# instead of Lloyd iteration; 1-D optimal clusters are intervals of the
# sorted values, which makes the exact solution cheap at small n.
_DP_MAX_DISTINCT = 512

KCB_MAGIC = b"KCB1"
_KCB_HEADER = struct.Struct("<4sBIQ")

RANGE_MAGIC = b"IR81"
_RANGE_STRUCT = struct.Struct("<4sff")


def _validate_centroid_rows(centroids: np.ndarray) -> tuple[bool, ...]:
    """Check the ascending-with-repeated-max-tail structure; return per-row degeneracy."""
    degenerate = []
    for row in centroids:
        if not np.isfinite(row).all():
            raise ValidationError("centroids must be finite")
        diffs = np.diff(row)
        if (diffs < 0).any():
            raise ValidationError("centroids must be sorted ascending")
        flat = np.flatnonzero(diffs == 0)
        if flat.size and not (row[flat] == row[-1]).all():
            raise ValidationError("duplicate centroids allowed only as a repeated-max tail")
        degenerate.append(bool(flat.size))
    return tuple(degenerate)


class Codebook:
    """Sorted scalar centroids learned by K-means, one row per scope unit.

    A degenerate row means fewer distinct values than k existed at fit time;
    the missing slots repeat the maximum value. seed/source_count/trajectory
    are fit provenance and do not participate in equality.
    """

    __slots__ = ("scope", "channels", "centroids", "seed", "source_count",
                 "degenerate_units", "sse_trajectories")

    def __init__(self, scope: str, channels: int, centroids: np.ndarray,
                 seed: int = 0, source_count: int = 0,
                 sse_trajectories: tuple = ()):
        if scope not in SCOPES:
            raise ValidationError(f"unknown codebook scope {scope!r}")
        if channels < 1:
            raise ValidationError("channels must be positive")
        arr = np.array(centroids, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 2:
            raise ValidationError("centroids must be 2-D (units, k)")
        units = 1 if scope == SCOPE_GLOBAL else channels
        if arr.shape[0] != units:
            raise ValidationError(
                f"{scope} codebook needs {units} centroid rows, got {arr.shape[0]}"
            )
        if arr.shape[1] < 1:
            raise ValidationError("codebook must have at least one centroid")
        degenerate = _validate_centroid_rows(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "scope", scope)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "centroids", arr)
        object.__setattr__(self, "seed", int(seed))
        object.__setattr__(self, "source_count", int(source_count))
        object.__setattr__(self, "degenerate_units", degenerate)
        object.__setattr__(self, "sse_trajectories", tuple(tuple(t) for t in sse_trajectories))

    def __setattr__(self, name, value):
        raise AttributeError("Codebook is immutable")

    @property
    def k(self) -> int:
        return self.centroids.shape[1]

    @property
    def units(self) -> int:
        return self.centroids.shape[0]

    @property
    def degenerate(self) -> bool:
        return any(self.degenerate_units)

    def without_provenance(self) -> "Codebook":
        """Copy with seed/source_count/trajectories zeroed (container storage form)."""
        return Codebook(self.scope, self.channels, self.centroids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Codebook):
            return NotImplemented
        return (
            self.scope == other.scope
            and self.channels == other.channels
            and self.seed == other.seed
            and np.array_equal(self.centroids, other.centroids)
        )

    def __repr__(self) -> str:
        return f"Codebook(scope={self.scope!r}, channels={self.channels}, k={self.k})"


@dataclass(frozen=True)
class Int8Range:
    """Calibrated value range split into 256 equal-width bins.

    min/max are float32-rounded at construction so the in-memory range is
    exactly what container serialization preserves.
    """

    min: float
    max: float

    def __post_init__(self):
        lo = float(np.float32(self.min))
        hi = float(np.float32(self.max))
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValidationError("range bounds must be finite")
        if not hi > lo:
            raise DegenerateDataError(f"range max {hi} must exceed min {lo}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def bin_width(self) -> float:
        return (self.max - self.min) / 256.0


class QuantizedLatent:
    """c x h x w grid of 8-bit indices plus the mode that produced them."""

    __slots__ = ("layout", "indices", "mode")

    def __init__(self, layout: LatentLayout, indices: np.ndarray, mode: str):
        if mode not in (KMEANS_8BIT, STATIC_INT8):
            raise ValidationError(f"unknown quantized mode {mode!r}")
        arr = np.array(indices, dtype=np.uint8, order="C", copy=True)
        if arr.ndim != 3 or arr.shape[0] != layout.channels:
            raise ValidationError(
                f"indices shape {arr.shape} inconsistent with {layout.channels} channels"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "indices", arr)
        object.__setattr__(self, "mode", mode)

    def __setattr__(self, name, value):
        raise AttributeError("QuantizedLatent is immutable")

    @property
    def grid(self) -> tuple[int, int]:
        return (self.indices.shape[1], self.indices.shape[2])

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedLatent):
            return NotImplemented
        return (
            self.layout == other.layout
            and self.mode == other.mode
            and np.array_equal(self.indices, other.indices)
        )


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _exact_1d_kmeans(unique: np.ndarray, counts: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Optimal weighted 1-D k-means on sorted distinct values via interval DP."""
    x = unique.astype(np.float64)
    w = counts.astype(np.float64)
    n = x.size
    cw = np.concatenate(([0.0], np.cumsum(w)))
    cwx = np.concatenate(([0.0], np.cumsum(w * x)))
    cwx2 = np.concatenate(([0.0], np.cumsum(w * x * x)))

    # cost[i, j] = weighted SSE of the interval x[i..j]
    i_idx = np.arange(n)[:, None]
    j_idx = np.arange(n)[None, :]
    seg_w = cw[j_idx + 1] - cw[i_idx]
    seg_s = cwx[j_idx + 1] - cwx[i_idx]
    seg_q = cwx2[j_idx + 1] - cwx2[i_idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = seg_q - seg_s * seg_s / seg_w
    cost[i_idx > j_idx] = np.inf
    np.maximum(cost, 0.0, out=cost)

    best = cost[0].copy()                      # 1 cluster covering x[0..j]
    split = np.zeros((k, n), dtype=np.int64)
    for m in range(1, k):
        # cluster m starts at i, previous clusters cover x[0..i-1]
        cand = np.full((n, n), np.inf)
        cand[m:, :] = best[m - 1:n - 1][:, None] + cost[m:, :]
        split[m] = np.argmin(cand, axis=0)
        best = np.min(cand, axis=0)

    starts = []
    j = n - 1
    for m in range(k - 1, 0, -1):
        i = int(split[m, j])
        starts.append(i)
        j = i - 1
    starts.append(0)
    starts = starts[::-1]
    ends = starts[1:] + [n]
    centroids = np.array(
        [(cwx[e] - cwx[s]) / (cw[e] - cw[s]) for s, e in zip(starts, ends)]
    )
    total = float(sum(cost[s, e - 1] for s, e in zip(starts, ends)))
    return centroids, total


def _kmeanspp_init(sorted_vals: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty(k)
    centroids[0] = sorted_vals[rng.integers(sorted_vals.size)]
    d2 = np.square(sorted_vals - centroids[0])
    cum = np.empty_like(d2)
    for j in range(1, k):
        np.cumsum(d2, out=cum)
        total = cum[-1]
        if total <= 0.0:
            centroids[j] = sorted_vals[rng.integers(sorted_vals.size)]
        else:
            pick = int(np.searchsorted(cum, rng.random() * total, side="right"))
            centroids[j] = sorted_vals[min(pick, sorted_vals.size - 1)]
        np.minimum(d2, np.square(sorted_vals - centroids[j]), out=d2)
    centroids.sort()
    return centroids


def _lloyd_1d(sorted_vals: np.ndarray, k: int, rng: np.random.Generator,
              max_iters: int, rel_tol: float) -> tuple[np.ndarray, list[float]]:
    """Lloyd iteration over sorted values; assignment via centroid midpoints."""
    n = sorted_vals.size
    ps = np.concatenate(([0.0], np.cumsum(sorted_vals)))
    ps2 = np.concatenate(([0.0], np.cumsum(np.square(sorted_vals))))
    centroids = _kmeanspp_init(sorted_vals, k, rng)
    trajectory: list[float] = []
    for _ in range(max_iters):
        bounds = (centroids[:-1] + centroids[1:]) / 2.0
        # values equal to a boundary fall in the lower cell
        edges = np.concatenate(([0], np.searchsorted(sorted_vals, bounds, side="right"), [n]))
        counts = np.diff(edges)
        seg_sum = ps[edges[1:]] - ps[edges[:-1]]
        seg_sq = ps2[edges[1:]] - ps2[edges[:-1]]
        sse = float(np.sum(seg_sq - 2.0 * centroids * seg_sum + counts * centroids**2))
        trajectory.append(sse)

        new_centroids = centroids.copy()
        nonempty = counts > 0
        new_centroids[nonempty] = seg_sum[nonempty] / counts[nonempty]
        empties = np.flatnonzero(~nonempty)
        if empties.size:
            # move one empty centroid per iteration to the value farthest
            # from its assigned centroid (cell extremes suffice in 1-D)
            lo = sorted_vals[edges[:-1][nonempty]]
            hi = sorted_vals[edges[1:][nonempty] - 1]
            cen = new_centroids[nonempty]
            gaps = np.stack([cen - lo, hi - cen])
            flat = int(np.argmax(gaps))
            which, cell = divmod(flat, cen.size)
            new_centroids[empties[0]] = (lo if which == 0 else hi)[cell]
            new_centroids.sort()

        converged = np.array_equal(new_centroids, centroids)
        centroids = new_centroids
        if converged:
            break
        if len(trajectory) >= 2:
            prev, cur = trajectory[-2], trajectory[-1]
            if prev > 0 and (prev - cur) / prev < rel_tol and not empties.size:
                break
    return centroids, trajectory


def _fit_unit(values: np.ndarray, k: int, rng: np.random.Generator,
              max_iters: int, rel_tol: float) -> tuple[np.ndarray, list[float]]:
    """Fit one centroid row over a 1-D value array (float64 math)."""
    vals = np.sort(values.astype(np.float64))
    unique, counts = np.unique(vals, return_counts=True)
    if unique.size <= k:
        pad = np.full(k - unique.size, unique[-1])
        return np.concatenate([unique, pad]), [0.0]
    if unique.size <= _DP_MAX_DISTINCT:
        centroids, sse = _exact_1d_kmeans(unique, counts, k)
        return centroids, [sse]
    return _lloyd_1d(vals, k, rng, max_iters, rel_tol)


def _unit_values(samples: list[LatentTensor], scope: str) -> list[np.ndarray]:
    if not samples:
        raise ValidationError("fit_codebook needs at least one latent sample")
    if scope == SCOPE_GLOBAL:
        return [np.concatenate([s.values.ravel() for s in samples])]
    channels = samples[0].channels
    for s in samples:
        if s.channels != channels:
            raise ValidationError("per-channel fit requires consistent channel counts")
    return [
        np.concatenate([s.values[c].ravel() for s in samples])
        for c in range(channels)
    ]


def fit_codebook(samples: list[LatentTensor], scope: str = SCOPE_GLOBAL, *,
                 k: int = DEFAULT_K, seed: int = 0,
                 max_samples: int = DEFAULT_MAX_SAMPLES,
                 max_iters: int = DEFAULT_MAX_ITERS,
                 rel_tol: float = DEFAULT_REL_TOL) -> Codebook:
    """Learn a K-means codebook over the scalar values of the given latents.

    Production uses k=256 (one byte per value); smaller k exists so tests can
    cross-check against exhaustive search. Values are capped at max_samples
    per scope unit by a seeded uniform subsample. Fewer than k distinct
    values yields a degenerate codebook (repeated-max fill), not an error.
    """
    if scope not in SCOPES:
        raise ValidationError(f"unknown codebook scope {scope!r}")
    if k < 1 or k > 65536:
        raise ValidationError(f"k {k} outside [1, 65536]")
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    channels = samples[0].channels if samples else 0
    unit_vals = _unit_values(samples, scope)

    rows = []
    trajectories = []
    used = 0
    for unit, vals in enumerate(unit_vals):
        rng = np.random.default_rng([seed, unit])
        if vals.size > max_samples:
            vals = vals[rng.choice(vals.size, size=max_samples, replace=False)]
        used += vals.size
        centroids, trajectory = _fit_unit(vals, k, rng, max_iters, rel_tol)
        rows.append(centroids)
        trajectories.append(trajectory)

    return Codebook(
        scope=scope,
        channels=1 if scope == SCOPE_GLOBAL else channels,
        centroids=np.asarray(rows, dtype=np.float32),
        seed=seed,
        source_count=used,
        sse_trajectories=tuple(trajectories),
    )


# ---------------------------------------------------------------------------
# Quantize / dequantize
# ---------------------------------------------------------------------------

def _assign_nearest(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid, ties toward the lower index.

    Boundary search over midpoints of consecutive distinct centroids; the
    float64 midpoints are exact for float32 centroids, so this matches a
    linear nearest-centroid scan bit-for-bit.
    """
    cents = centroids.astype(np.float64)
    unique, first = np.unique(cents, return_index=True)
    bounds = (unique[:-1] + unique[1:]) / 2.0
    picks = np.searchsorted(bounds, values.astype(np.float64), side="left")
    return first[picks].astype(np.uint8)


def _check_scope(cb: Codebook, layout: LatentLayout) -> None:
    if cb.scope == SCOPE_PER_CHANNEL and cb.channels != layout.channels:
        raise ValidationError(
            f"per-channel codebook has {cb.channels} rows, latent has {layout.channels} channels"
        )


def quantize_kmeans(latent: LatentTensor, cb: Codebook) -> QuantizedLatent:
    """Replace each value with the index of its nearest codebook centroid."""
    if cb.k > 256:
        raise ValidationError("8-bit quantization requires k <= 256")
    _check_scope(cb, latent.layout)
    if cb.scope == SCOPE_GLOBAL:
        idx = _assign_nearest(latent.values.ravel(), cb.centroids[0])
        idx = idx.reshape(latent.values.shape)
    else:
        idx = np.stack([
            _assign_nearest(latent.values[c].ravel(), cb.centroids[c]).reshape(latent.grid)
            for c in range(latent.channels)
        ])
    return QuantizedLatent(latent.layout, idx, KMEANS_8BIT)


def quantize_int8(latent: LatentTensor, rng: Int8Range) -> QuantizedLatent:
    """Uniform 256-bin quantization over the calibrated range; out-of-range clamps."""
    v = latent.values.astype(np.float64)
    idx = np.floor((v - rng.min) / rng.bin_width)
    idx = np.clip(idx, 0, 255).astype(np.uint8)
    return QuantizedLatent(latent.layout, idx, STATIC_INT8)


def dequantize(q: QuantizedLatent, dictionary: Codebook | Int8Range) -> LatentTensor:
    """Map indices back to centroids (kmeans) or bin midpoints (int8)."""
    if q.mode == KMEANS_8BIT:
        if not isinstance(dictionary, Codebook):
            raise ValidationError("kmeans-quantized latent needs a Codebook to dequantize")
        _check_scope(dictionary, q.layout)
        if q.indices.max(initial=0) >= dictionary.k:
            raise ValidationError("index exceeds codebook size")
        if dictionary.scope == SCOPE_GLOBAL:
            values = dictionary.centroids[0][q.indices]
        else:
            values = np.stack([
                dictionary.centroids[c][q.indices[c]] for c in range(q.layout.channels)
            ])
    else:
        if not isinstance(dictionary, Int8Range):
            raise ValidationError("int8-quantized latent needs an Int8Range to dequantize")
        mid = dictionary.min + (q.indices.astype(np.float64) + 0.5) * dictionary.bin_width
        values = mid.astype(np.float32)
    return LatentTensor(q.layout, values)


def calibrate_int8_range(samples: list[LatentTensor]) -> Int8Range:
    """Observed value range over the samples, symmetrized to [-m, m].

    Symmetric bounds keep zero representable near a bin center, which suits
    latent distributions concentrated around zero.
    """
    if not samples:
        raise ValidationError("calibrate_int8_range needs at least one latent sample")
    m = 0.0
    for s in samples:
        m = max(m, float(np.abs(s.values).max()))
    if m == 0.0:
        raise DegenerateDataError("all sampled values are zero; range has no width")
    m = float(np.float32(m))
    return Int8Range(-m, m)


# ---------------------------------------------------------------------------
# Standalone codebook file (KCB1)
# ---------------------------------------------------------------------------

def write_codebook(cb: Codebook) -> bytes:
    """Serialize a codebook: magic, scope byte, channels, seed, centroid rows."""
    scope_byte = 0 if cb.scope == SCOPE_GLOBAL else 1
    header = _KCB_HEADER.pack(KCB_MAGIC, scope_byte, cb.channels, cb.seed)
    return header + cb.centroids.astype("<f4", copy=False).tobytes()


def read_codebook(data: bytes) -> Codebook:
    """Parse KCB1 bytes; fit provenance other than the seed is not stored."""
    if len(data) < _KCB_HEADER.size:
        raise TruncatedPayloadError("KCB1 header truncated")
    magic, scope_byte, channels, seed = _KCB_HEADER.unpack_from(data)
    if magic != KCB_MAGIC:
        raise BadMagicError(f"bad KCB1 magic {magic!r}")
    if scope_byte not in (0, 1):
        raise CorruptPayloadError(f"unknown scope byte {scope_byte}")
    scope = SCOPE_GLOBAL if scope_byte == 0 else SCOPE_PER_CHANNEL
    units = 1 if scope == SCOPE_GLOBAL else channels
    payload = data[_KCB_HEADER.size:]
    if units < 1 or len(payload) % (4 * units) != 0 or len(payload) == 0:
        raise CorruptPayloadError(
            f"codebook payload of {len(payload)} bytes does not divide into {units} rows"
        )
    k = len(payload) // (4 * units)
    centroids = np.frombuffer(payload, dtype="<f4").reshape(units, k)
    try:
        return Codebook(scope=scope, channels=channels, centroids=centroids, seed=seed)
    except ValidationError as exc:
        raise CorruptPayloadError(f"invalid KCB1 payload: {exc}") from exc


def write_range(rng: Int8Range) -> bytes:
    """Serialize a calibrated int8 range (magic, f32 min, f32 max)."""
    return _RANGE_STRUCT.pack(RANGE_MAGIC, rng.min, rng.max)


def read_range(data: bytes) -> Int8Range:
    """Parse IR81 bytes back into an Int8Range."""
    if len(data) < _RANGE_STRUCT.size:
        raise TruncatedPayloadError("IR81 file truncated")
    if len(data) > _RANGE_STRUCT.size:
        raise CorruptPayloadError(f"{len(data) - _RANGE_STRUCT.size} trailing bytes in IR81 file")
    magic, lo, hi = _RANGE_STRUCT.unpack(data)
    if magic != RANGE_MAGIC:
        raise BadMagicError(f"bad IR81 magic {magic!r}")
    try:
        return Int8Range(lo, hi)
    except (ValidationError, DegenerateDataError) as exc:
        raise CorruptPayloadError(f"invalid IR81 range: {exc}") from exc
