import json
import math

import numpy as np
import pytest

from latent_codec import (
    EmbeddingVector,
    ImageBuffer,
    Int8Range,
    LatentLayout,
    NonFiniteValueError,
    ValidationError,
    build_report,
    compress_image,
    embed_cosine,
    embed_l1,
    psnr,
    read_eef,
    ssim,
    write_eef,
)
from latent_codec import RAW_F32, STATIC_INT8
from latent_codec.errors import BadMagicError, TruncatedPayloadError, UnsupportedFormatError

from conftest import identity_model
from _textures import texture_corpus


def _img(arr):
    return ImageBuffer(np.asarray(arr, dtype=np.uint8))


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

def test_psnr_identical_is_infinite():
    img = texture_corpus(seed=1, count=1, size=64)[0]
    assert psnr(img, img) == float("inf")


def test_psnr_plus_one_offset():
    rng = np.random.default_rng(2)
    ref = rng.integers(1, 255, (64, 64, 3), dtype=np.uint8)  # +1 never clamps
    value = psnr(_img(ref), _img(ref + 1))
    assert value == pytest.approx(20 * math.log10(255), abs=1e-3)
    assert value == pytest.approx(48.1308, abs=1e-3)


def test_psnr_dim_mismatch():
    a = _img(np.zeros((64, 64, 3)))
    b = _img(np.zeros((64, 63, 3)))
    with pytest.raises(ValidationError):
        psnr(a, b)


def test_psnr_symmetric():
    imgs = texture_corpus(seed=3, count=2, size=64)
    assert psnr(imgs[0], imgs[1]) == psnr(imgs[1], imgs[0])


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

def _inverted_fixture():
    rng = np.random.default_rng(2024)
    blocks = rng.integers(0, 2, (8, 8, 3), dtype=np.uint8) * 255
    ref = np.kron(blocks, np.ones((16, 16, 1), dtype=np.uint8))
    return _img(ref), _img(255 - ref)


def test_ssim_identical():
    img = texture_corpus(seed=4, count=1, size=64)[0]
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)


def test_ssim_inverted_high_contrast():
    ref, inv = _inverted_fixture()
    value = ssim(ref, inv)
    # frozen from scikit-image structural_similarity (11x11 gaussian, sigma
    # 1.5, K1=0.01, K2=0.03, data_range=255, population covariance)
    assert value == pytest.approx(-0.15584573411466643, abs=1e-9)
    assert value < 0.5


def test_ssim_matches_reference_implementation():
    skimage_metrics = pytest.importorskip("skimage.metrics")
    imgs = texture_corpus(seed=5, count=2, size=96)
    expected = np.mean([
        skimage_metrics.structural_similarity(
            imgs[0].pixels[:, :, c], imgs[1].pixels[:, :, c],
            win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=255, K1=0.01, K2=0.03,
        )
        for c in range(3)
    ])
    assert ssim(imgs[0], imgs[1]) == pytest.approx(float(expected), abs=1e-9)


def test_ssim_constant_vs_constant_closed_form():
    a = _img(np.full((32, 32, 3), 60))
    b = _img(np.full((32, 32, 3), 180))
    c1 = (0.01 * 255) ** 2
    closed = (2 * 60 * 180 + c1) / (60**2 + 180**2 + c1)
    assert ssim(a, b) == pytest.approx(closed, abs=1e-6)


def test_ssim_window_too_small():
    a = _img(np.zeros((10, 32, 3)))
    with pytest.raises(ValidationError):
        ssim(a, a)


def test_ssim_symmetric():
    imgs = texture_corpus(seed=6, count=2, size=64)
    assert ssim(imgs[0], imgs[1]) == pytest.approx(ssim(imgs[1], imgs[0]), abs=1e-12)


# ---------------------------------------------------------------------------
# Embedding metrics
# ---------------------------------------------------------------------------

def test_cosine_identities():
    v = EmbeddingVector([1.0, 2.0, -3.0])
    assert embed_cosine(v, v) == pytest.approx(1.0)
    neg = EmbeddingVector([-1.0, -2.0, 3.0])
    assert embed_cosine(v, neg) == pytest.approx(-1.0)
    e1 = EmbeddingVector([1.0, 0.0])
    e2 = EmbeddingVector([0.0, 1.0])
    assert embed_cosine(e1, e2) == 0.0


def test_cosine_errors():
    with pytest.raises(ValidationError):
        embed_cosine(EmbeddingVector([1.0, 0.0]), EmbeddingVector([1.0, 0.0, 0.0]))
    with pytest.raises(ValidationError):
        embed_cosine(EmbeddingVector([0.0, 0.0]), EmbeddingVector([1.0, 0.0]))


def test_cosine_scale_invariant():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = rng.normal(size=8)
        b = rng.normal(size=8)
        base = embed_cosine(EmbeddingVector(a), EmbeddingVector(b))
        scaled = embed_cosine(
            EmbeddingVector(a * rng.uniform(0.1, 50)), EmbeddingVector(b * rng.uniform(0.1, 50))
        )
        assert scaled == pytest.approx(base, abs=1e-5)


def test_l1_identities():
    v = EmbeddingVector([1.0, 2.0])
    assert embed_l1(v, v) == 0.0
    assert embed_l1(EmbeddingVector([1.0, 2.0]), EmbeddingVector([2.0, 0.0])) == 3.0
    with pytest.raises(ValidationError):
        embed_l1(v, EmbeddingVector([1.0]))


def test_l1_triangle_inequality():
    rng = np.random.default_rng(8)
    for _ in range(50):
        a, b, c = (EmbeddingVector(rng.normal(size=6)) for _ in range(3))
        assert embed_l1(a, c) <= embed_l1(a, b) + embed_l1(b, c) + 1e-9


def test_l1_scales_linearly():
    rng = np.random.default_rng(9)
    a = rng.normal(size=12)
    b = rng.normal(size=12)
    base = embed_l1(EmbeddingVector(a), EmbeddingVector(b))
    assert embed_l1(EmbeddingVector(3 * a), EmbeddingVector(3 * b)) == pytest.approx(
        3 * base, rel=1e-5
    )


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

def test_report_raw_sd3_payload():
    img = texture_corpus(seed=10, count=1)[0]
    model = identity_model(LatentLayout.preset("sd3-like"))
    container = compress_image(img, model, RAW_F32)
    report = build_report(img, container, img)
    assert report.payload_bytes == 65536
    assert report.payload_bytes <= report.total_bytes


def test_report_identical_images():
    img = texture_corpus(seed=11, count=1, size=64)[0]
    model = identity_model(LatentLayout(8, 4))
    container = compress_image(img, model, STATIC_INT8, Int8Range(-1, 1), tile_size=32)
    emb = EmbeddingVector(np.arange(1, 9, dtype=np.float32), "unit-test")
    report = build_report(img, container, img, embeddings=(emb, emb))
    assert report.ssim == pytest.approx(1.0, abs=1e-9)
    assert report.psnr_db == float("inf")
    assert report.embed_cosine == pytest.approx(1.0)
    assert report.embed_l1 == 0.0
    assert len(report.per_tile) == 4
    assert all(t.psnr_db == float("inf") for t in report.per_tile)


def test_report_embeddings_absent_not_zero():
    img = texture_corpus(seed=12, count=1, size=64)[0]
    model = identity_model(LatentLayout(8, 4))
    container = compress_image(img, model, RAW_F32, tile_size=64)
    report = build_report(img, container, img)
    payload = json.loads(report.to_json())
    assert "embed_cosine" not in payload
    assert "embed_l1" not in payload
    assert payload["payload_bytes"] == report.payload_bytes


# ---------------------------------------------------------------------------
# EEF files
# ---------------------------------------------------------------------------

def test_eef_roundtrip():
    rng = np.random.default_rng(13)
    vec = EmbeddingVector(rng.normal(size=1024).astype(np.float32), "uni-v1")
    data = write_eef(vec)
    back = read_eef(data)
    assert back == vec
    assert write_eef(back) == data


def test_eef_errors():
    vec = EmbeddingVector([1.0, 2.0], "e")
    data = write_eef(vec)
    with pytest.raises(BadMagicError):
        read_eef(b"NOPE" + data[4:])
    with pytest.raises(TruncatedPayloadError):
        read_eef(data[:-1])
    with pytest.raises(UnsupportedFormatError):
        read_eef(data + b"\x00")
    with pytest.raises(NonFiniteValueError):
        EmbeddingVector([np.nan])
    with pytest.raises(ValidationError):
        EmbeddingVector([])
