"""Acceptance suite: one test per release criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see one pass line per
criterion. Every tolerance and runtime bound is enforced in the assertions.
"""

import itertools
import math
import time

import numpy as np
import pytest

from latent_codec import (
    KMEANS_8BIT,
    RAW_F32,
    STATIC_INT8,
    Codebook,
    EmbeddingVector,
    FormatError,
    ImageBuffer,
    Int8Range,
    LatentLayout,
    LatentTensor,
    LinearCodecModel,
    CompressedContainer,
    calibrate_int8_range,
    compress_image,
    decompress_image,
    dequantize,
    embed_cosine,
    embed_l1,
    encode,
    fit_codebook,
    fit_linear_codec,
    psnr,
    quantize_int8,
    quantize_kmeans,
    read_codebook,
    read_container,
    read_lif,
    read_model,
    ssim,
    write_codebook,
    write_container,
    write_lif,
    write_model,
)
from latent_codec.pca import decode

from conftest import identity_model
from test_quantize import _tensor_1d, nearest_scan, optimal_partition_sse


class _Timer:
    def __init__(self, name, limit_s):
        self.name = name
        self.limit_s = limit_s

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            assert elapsed < self.limit_s, (
                f"{self.name} took {elapsed:.2f}s, limit {self.limit_s}s"
            )
            print(f"[PASS] {self.name} ({elapsed:.2f}s)", flush=True)
        else:
            print(f"[FAIL] {self.name} ({elapsed:.2f}s)", flush=True)


def test_size_arithmetic_matches_reference_table():
    with _Timer("size-arithmetic", 1.0):
        rng = np.random.default_rng(0)
        img = ImageBuffer(rng.integers(0, 256, (256, 256, 3), dtype=np.uint8))
        expected = {
            "sd15-like": (16384, 4096),
            "sd3-like": (65536, 16384),
            "dcae-like": (8192, 2048),
        }
        cal = Int8Range(-1.0, 1.0)
        for name, (raw_bytes, quant_bytes) in expected.items():
            model = identity_model(LatentLayout.preset(name))
            raw = compress_image(img, model, RAW_F32)
            assert raw.payload_bytes == raw_bytes
            quant = compress_image(img, model, STATIC_INT8, cal)
            assert quant.payload_bytes == quant_bytes
            for container in (raw, quant):
                overhead = len(write_container(container)) - container.payload_bytes
                assert overhead < 1.2 * 1024


def test_kmeans_fit_matches_exhaustive_oracle():
    with _Timer("kmeans-oracle", 10.0):
        rng = np.random.default_rng(2025)
        for trial in range(50):
            k = int(rng.integers(1, 4))
            n = int(rng.integers(k, 13))
            values = rng.normal(scale=rng.uniform(0.05, 10.0), size=n).astype(np.float32)
            cb = fit_codebook([_tensor_1d(values)], k=k, seed=trial)
            fitted = cb.sse_trajectories[0][-1]
            optimum, _ = optimal_partition_sse(values, k)
            assert fitted == pytest.approx(optimum, rel=1e-9, abs=1e-12)


def test_assignment_matches_linear_scan_oracle():
    with _Timer("assignment-oracle", 5.0):
        rng = np.random.default_rng(7)
        cb = fit_codebook(
            [_tensor_1d(rng.laplace(0, 0.5, 60000).astype(np.float32))], k=256, seed=0
        )
        cents = cb.centroids[0]
        probes = np.concatenate([
            rng.laplace(0, 0.5, 60000),
            rng.uniform(cents.min() - 1, cents.max() + 1, 40000 - 256),
            cents.astype(np.float64),
        ]).astype(np.float32)
        assert probes.size == 100_000
        q = quantize_kmeans(_tensor_1d(probes), cb)
        mismatches = int(np.sum(q.indices.ravel() != nearest_scan(probes, cents)))
        assert mismatches == 0


def test_kmeans_beats_static_int8_on_skewed_values():
    with _Timer("skew-advantage", 30.0):
        rng = np.random.default_rng(11)
        ratios = []
        for b in (0.1, 0.3, 1.0):
            t = _tensor_1d(rng.laplace(0, b, 100_000).astype(np.float32))
            cb = fit_codebook([t], k=256, seed=1)
            cal = calibrate_int8_range([t])
            mse_k = float(np.mean(np.square(
                dequantize(quantize_kmeans(t, cb), cb).values - t.values
            )))
            mse_i = float(np.mean(np.square(
                dequantize(quantize_int8(t, cal), cal).values - t.values
            )))
            assert mse_k < mse_i
            ratios.append(mse_i / mse_k)
        print(f"  int8/kmeans MSE ratios at b=0.1/0.3/1.0: "
              f"{ratios[0]:.2f} / {ratios[1]:.2f} / {ratios[2]:.2f}", flush=True)


def test_end_to_end_pipeline(train_corpus, heldout_corpus):
    with _Timer("end-to-end-pipeline", 120.0):
        layout = LatentLayout.preset("sd15-like")
        model = fit_linear_codec(train_corpus, layout, seed=0)
        train_latents = [encode(model, img) for img in train_corpus]
        cb = fit_codebook(train_latents, k=256, seed=0)
        cal = calibrate_int8_range(train_latents)

        wins = 0
        for img in heldout_corpus:
            psnr_k = psnr(img, decompress_image(
                compress_image(img, model, KMEANS_8BIT, cb), model))
            psnr_i = psnr(img, decompress_image(
                compress_image(img, model, STATIC_INT8, cal), model))
            assert math.isfinite(psnr_k) and math.isfinite(psnr_i)
            wins += psnr_k >= psnr_i
        assert wins >= 18, f"kmeans won on only {wins}/20 held-out images"

        full = fit_linear_codec(train_corpus, LatentLayout(8, 192, "f8-full"), seed=0)
        identical = sum(
            decompress_image(compress_image(img, full, RAW_F32), full) == img
            for img in heldout_corpus
        )
        assert identical == 20
        print(f"  kmeans >= int8 PSNR on {wins}/20; raw-f32 bit-identical on 20/20",
              flush=True)


def test_rate_distortion_monotone_in_channels(train_corpus):
    with _Timer("rate-distortion-monotonicity", 120.0):
        means = []
        for c in (2, 4, 8, 16):
            model = fit_linear_codec(train_corpus, LatentLayout(8, c), seed=5)
            vals = [
                psnr(img, decode(model, encode(model, img), img.dims))
                for img in train_corpus
            ]
            means.append(float(np.mean(vals)))
        assert all(a <= b for a, b in zip(means, means[1:])), means
        print(f"  mean PSNR over c=2/4/8/16: "
              + " / ".join(f"{m:.2f}" for m in means), flush=True)


# ---------------------------------------------------------------------------
# Format roundtrips
# ---------------------------------------------------------------------------

def _random_layout(rng, max_factor=8):
    factors = [f for f in (1, 2, 4, 8) if f <= max_factor]
    f = int(rng.choice(factors))
    return LatentLayout(f, int(rng.integers(1, 9)), model_id=f"rt{rng.integers(0, 999)}")


def _random_lif(rng) -> bytes:
    layout = _random_layout(rng)
    shape = (layout.channels, int(rng.integers(1, 10)), int(rng.integers(1, 10)))
    return write_lif(LatentTensor(layout, rng.normal(size=shape).astype(np.float32)))


def _random_ascending(rng, k):
    gaps = rng.uniform(1e-3, 1.0, size=k)
    return np.cumsum(gaps).astype(np.float32)


def _random_kcb(rng) -> bytes:
    per_channel = bool(rng.integers(0, 2))
    channels = int(rng.integers(1, 6)) if per_channel else 1
    k = int(rng.integers(1, 257))
    rows = np.stack([_random_ascending(rng, k) for _ in range(channels)])
    cb = Codebook(
        "per-channel" if per_channel else "global", channels, rows,
        seed=int(rng.integers(0, 2**63)),
    )
    return write_codebook(cb)


def _random_model(rng) -> bytes:
    f = int(rng.choice([1, 2, 4]))
    patch_dim = 3 * f * f
    channels = int(rng.integers(1, min(9, patch_dim + 1)))
    layout = LatentLayout(f, channels, model_id=f"rt{rng.integers(0, 999)}")
    basis, _ = np.linalg.qr(rng.normal(size=(patch_dim, patch_dim)))
    model = LinearCodecModel(
        layout,
        rng.uniform(0, 1, patch_dim).astype(np.float32),
        basis[:, :channels].T.astype(np.float32),
    )
    return write_model(model)


def _random_container(rng) -> CompressedContainer:
    layout = _random_layout(rng)
    ts = layout.factor * int(rng.integers(1, 5))
    rows_n = int(rng.integers(1, 4))
    cols_n = int(rng.integers(1, 4))
    H = int(rng.integers((rows_n - 1) * ts + 1, rows_n * ts + 1))
    W = int(rng.integers((cols_n - 1) * ts + 1, cols_n * ts + 1))
    mode = (RAW_F32, STATIC_INT8, KMEANS_8BIT)[int(rng.integers(0, 3))]
    if mode == RAW_F32:
        dictionary = None
    elif mode == STATIC_INT8:
        lo = float(rng.uniform(-5, 0) - 0.1)
        dictionary = Int8Range(lo, float(rng.uniform(0.1, 5)))
    else:
        per_channel = bool(rng.integers(0, 2))
        units = layout.channels if per_channel else 1
        dictionary = Codebook(
            "per-channel" if per_channel else "global",
            units,
            np.stack([_random_ascending(rng, 256) for _ in range(units)]),
        )
    side = ts // layout.factor
    shape = (layout.channels, side, side)
    tiles = []
    for _ in range(rows_n * cols_n):
        if mode == RAW_F32:
            tiles.append(rng.normal(size=shape).astype(np.float32))
        else:
            tiles.append(rng.integers(0, 256, size=shape, dtype=np.uint8))
    return CompressedContainer(mode, layout, ts, (H, W), dictionary, tuple(tiles))


def test_format_roundtrips_and_crc():
    with _Timer("format-roundtrips", 10.0):
        rng = np.random.default_rng(99)
        for _ in range(100):
            data = _random_lif(rng)
            assert write_lif(read_lif(data)) == data
        for _ in range(100):
            data = _random_kcb(rng)
            assert write_codebook(read_codebook(data)) == data
        for _ in range(100):
            data = _random_model(rng)
            assert write_model(read_model(data)) == data
        for _ in range(100):
            container = _random_container(rng)
            data = write_container(container)
            back = read_container(data)
            assert back == container
            assert write_container(back) == data

        # single-byte corruption of a PLC1 artifact is always detected
        small = write_container(_random_container(np.random.default_rng(5)))
        for pos in range(len(small)):
            corrupt = bytearray(small)
            corrupt[pos] ^= 0x01
            with pytest.raises(FormatError):
                read_container(bytes(corrupt))


def test_metric_fixtures():
    with _Timer("metric-fixtures", 10.0):
        rng = np.random.default_rng(1)
        ref = ImageBuffer(rng.integers(1, 255, (64, 64, 3), dtype=np.uint8))
        off = ImageBuffer(ref.pixels + 1)
        assert psnr(ref, off) == pytest.approx(48.1308, abs=1e-3)

        img = ImageBuffer(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)

        a = ImageBuffer(np.full((32, 32, 3), 60, dtype=np.uint8))
        b = ImageBuffer(np.full((32, 32, 3), 180, dtype=np.uint8))
        c1 = (0.01 * 255) ** 2
        closed_form = (2 * 60 * 180 + c1) / (60**2 + 180**2 + c1)
        assert ssim(a, b) == pytest.approx(closed_form, abs=1e-6)

        v = EmbeddingVector([3.0, -4.0, 12.0])
        assert embed_cosine(v, v) == 1.0
        assert embed_cosine(v, EmbeddingVector([-3.0, 4.0, -12.0])) == -1.0
        assert embed_cosine(EmbeddingVector([1.0, 0.0]), EmbeddingVector([0.0, 1.0])) == 0.0
        assert embed_l1(v, v) == 0.0
        assert embed_l1(EmbeddingVector([1.0, 2.0]), EmbeddingVector([2.0, 0.0])) == 3.0
