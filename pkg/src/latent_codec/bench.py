"""Batch rate-distortion benchmark over a JSON manifest.

The manifest names tile images, an optional externally produced reference
reconstruction (with its true compressed byte size, e.g. a JPEG baseline),
optional embedding pairs, and the mode matrix (layouts x quant modes). One
CSV row is emitted per reference and per (entry, layout, mode) cell, in
manifest order; per-entry failures land in the row's error column and the
run continues.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .container import compress_image, decompress_image, write_container
from .errors import LatentCodecError, ValidationError
from .images import ImageBuffer, read_image
from .latents import (
    KMEANS_8BIT,
    LAYOUT_PRESETS,
    RAW_F32,
    STATIC_INT8,
    LatentLayout,
)
from .metrics import embed_cosine, embed_l1, psnr, read_eef, ssim
from .pca import LinearCodecModel, encode, fit_linear_codec, read_model
from .quantize import calibrate_int8_range, fit_codebook

THREADS_ENV_VAR = "LATENT_CODEC_THREADS"

MODE_ALIASES = {
    "raw": RAW_F32,
    "int8": STATIC_INT8,
    "kmeans": KMEANS_8BIT,
    RAW_F32: RAW_F32,
    STATIC_INT8: STATIC_INT8,
    KMEANS_8BIT: KMEANS_8BIT,
}
MODE_SHORT = {RAW_F32: "raw", STATIC_INT8: "int8", KMEANS_8BIT: "kmeans"}

CSV_COLUMNS = (
    "entry", "kind", "layout", "quant", "payload_bytes", "total_bytes",
    "psnr_db", "ssim", "embed_cosine", "embed_l1", "error",
)


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    reconstruction: Path | None = None
    reconstruction_bytes: int | None = None
    reconstruction_label: str = "reference"
    embedding_original: Path | None = None
    embedding_reconstruction: Path | None = None


@dataclass(frozen=True)
class BenchmarkManifest:
    entries: tuple[ManifestEntry, ...]
    layouts: tuple[tuple[str, LatentLayout], ...]
    quant_modes: tuple[str, ...]
    models: dict[str, Path] = field(default_factory=dict)
    seed: int = 0
    tile_size: int = 256

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("manifest has no entries")
        if not self.layouts or not self.quant_modes:
            raise ValidationError("manifest mode matrix is empty (layouts x quant modes)")


def _entry_from_json(obj: dict, base: Path) -> ManifestEntry:
    if "image" not in obj or not obj["image"]:
        raise ValidationError("manifest entry is missing a non-empty 'image' path")

    def path_of(key):
        return base / obj[key] if obj.get(key) else None

    recon = path_of("reconstruction")
    recon_bytes = obj.get("reconstruction_bytes")
    if recon is not None and recon_bytes is None:
        raise ValidationError(
            f"entry {obj['image']!r} lists a reconstruction without reconstruction_bytes"
        )
    return ManifestEntry(
        image=base / obj["image"],
        reconstruction=recon,
        reconstruction_bytes=recon_bytes,
        reconstruction_label=obj.get("reconstruction_label", "reference"),
        embedding_original=path_of("embedding_original"),
        embedding_reconstruction=path_of("embedding_reconstruction"),
    )


def _layout_from_json(obj, index: int) -> tuple[str, LatentLayout]:
    if isinstance(obj, str):
        return obj, LatentLayout.preset(obj)
    if isinstance(obj, dict):
        factor = obj.get("factor")
        channels = obj.get("channels")
        if factor is None or channels is None:
            raise ValidationError(f"layout #{index} needs 'factor' and 'channels'")
        name = obj.get("name", f"f{factor}c{channels}")
        return name, LatentLayout(int(factor), int(channels), model_id=name)
    raise ValidationError(f"layout #{index} must be a preset name or an object")


def parse_manifest(path: str | Path) -> BenchmarkManifest:
    """Load a manifest file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest is not valid JSON: {exc}") from exc
    base = path.parent
    entries = tuple(_entry_from_json(e, base) for e in raw.get("entries", []))
    layouts = tuple(_layout_from_json(o, i) for i, o in enumerate(raw.get("layouts", [])))
    modes = []
    for m in raw.get("quant_modes", []):
        if m not in MODE_ALIASES:
            raise ValidationError(f"unknown quant mode {m!r} in manifest")
        modes.append(MODE_ALIASES[m])
    models = {name: base / p for name, p in raw.get("models", {}).items()}
    return BenchmarkManifest(
        entries=entries,
        layouts=layouts,
        quant_modes=tuple(modes),
        models=models,
        seed=int(raw.get("seed", 0)),
        tile_size=int(raw.get("tile_size", 256)),
    )


def worker_count(flag_value: int | None) -> int:
    """Bounded worker count; the environment variable overrides the flag."""
    env = os.environ.get(THREADS_ENV_VAR)
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV_VAR}={env!r} is not an integer") from None
    else:
        n = flag_value if flag_value is not None else 1
    if n < 1:
        raise ValidationError(f"worker count must be >= 1, got {n}")
    return n


@dataclass
class _LayoutKit:
    """Per-layout model and shared dictionaries, or the error that blocked them."""

    model: LinearCodecModel | None = None
    codebook: object = None
    int8_range: object = None
    error: str | None = None


def _prepare_layouts(manifest: BenchmarkManifest,
                     images: dict[Path, ImageBuffer]) -> dict[str, _LayoutKit]:
    kits: dict[str, _LayoutKit] = {}
    fit_corpus = [images[e.image] for e in manifest.entries if e.image in images]
    for name, layout in manifest.layouts:
        kit = _LayoutKit()
        try:
            model_path = manifest.models.get(name)
            if model_path is not None:
                model = read_model(Path(model_path).read_bytes())
                if (model.layout.factor, model.layout.channels) != (layout.factor, layout.channels):
                    raise ValidationError(
                        f"model {model_path} is f{model.layout.factor}c{model.layout.channels}, "
                        f"manifest layout {name} is f{layout.factor}c{layout.channels}"
                    )
            else:
                if not fit_corpus:
                    raise ValidationError("no readable images to fit a model on")
                model = fit_linear_codec(fit_corpus, layout, seed=manifest.seed)
            kit.model = model
            needs_latents = (
                KMEANS_8BIT in manifest.quant_modes or STATIC_INT8 in manifest.quant_modes
            )
            if needs_latents:
                latents = [encode(model, img) for img in fit_corpus]
                if not latents:
                    raise ValidationError("no readable images to calibrate on")
                if KMEANS_8BIT in manifest.quant_modes:
                    kit.codebook = fit_codebook(latents, k=256, seed=manifest.seed)
                if STATIC_INT8 in manifest.quant_modes:
                    kit.int8_range = calibrate_int8_range(latents)
        except (LatentCodecError, OSError) as exc:
            kit.error = str(exc)
        kits[name] = kit
    return kits


def _blank_row(entry: ManifestEntry, kind: str) -> dict:
    return {
        "entry": str(entry.image), "kind": kind, "layout": "", "quant": "",
        "payload_bytes": "", "total_bytes": "", "psnr_db": "", "ssim": "",
        "embed_cosine": "", "embed_l1": "", "error": "",
    }


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.6f}"


def _reference_row(entry: ManifestEntry, original: ImageBuffer) -> dict:
    row = _blank_row(entry, "reference")
    row["quant"] = entry.reconstruction_label
    try:
        recon = read_image(entry.reconstruction)
        row["payload_bytes"] = entry.reconstruction_bytes
        row["total_bytes"] = entry.reconstruction_bytes
        row["psnr_db"] = _fmt(psnr(original, recon))
        row["ssim"] = _fmt(ssim(original, recon))
        if entry.embedding_original and entry.embedding_reconstruction:
            a = read_eef(Path(entry.embedding_original).read_bytes())
            b = read_eef(Path(entry.embedding_reconstruction).read_bytes())
            row["embed_cosine"] = _fmt(embed_cosine(a, b))
            row["embed_l1"] = _fmt(embed_l1(a, b))
    except (LatentCodecError, OSError) as exc:
        row["error"] = str(exc)
    return row


def _entry_rows(entry: ManifestEntry, original: ImageBuffer,
                manifest: BenchmarkManifest, kits: dict[str, _LayoutKit]) -> list[dict]:
    rows = []
    if entry.reconstruction is not None:
        rows.append(_reference_row(entry, original))
    for name, _ in manifest.layouts:
        kit = kits[name]
        for mode in manifest.quant_modes:
            row = _blank_row(entry, "codec")
            row["layout"] = name
            row["quant"] = MODE_SHORT[mode]
            if kit.error is not None:
                row["error"] = kit.error
                rows.append(row)
                continue
            try:
                dictionary = None
                if mode == KMEANS_8BIT:
                    dictionary = kit.codebook
                elif mode == STATIC_INT8:
                    dictionary = kit.int8_range
                container = compress_image(
                    original, kit.model, mode, dictionary, tile_size=manifest.tile_size
                )
                recon = decompress_image(container, kit.model)
                row["payload_bytes"] = container.payload_bytes
                row["total_bytes"] = len(write_container(container))
                row["psnr_db"] = _fmt(psnr(original, recon))
                row["ssim"] = _fmt(ssim(original, recon))
            except (LatentCodecError, OSError) as exc:
                row["error"] = str(exc)
            rows.append(row)
    return rows


def run_benchmark(manifest: BenchmarkManifest, workers: int = 1) -> list[dict]:
    """Produce one row dict per manifest cell, in deterministic manifest order."""
    images: dict[Path, ImageBuffer] = {}
    load_errors: dict[Path, str] = {}
    for entry in manifest.entries:
        if entry.image in images or entry.image in load_errors:
            continue
        try:
            images[entry.image] = read_image(entry.image)
        except (LatentCodecError, OSError) as exc:
            load_errors[entry.image] = str(exc)

    kits = _prepare_layouts(manifest, images)

    def rows_for(entry: ManifestEntry) -> list[dict]:
        if entry.image in load_errors:
            row = _blank_row(entry, "error")
            row["error"] = load_errors[entry.image]
            return [row]
        return _entry_rows(entry, images[entry.image], manifest, kits)

    if workers == 1:
        buckets = [rows_for(e) for e in manifest.entries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            buckets = list(pool.map(rows_for, manifest.entries))
    return [row for bucket in buckets for row in bucket]


def write_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
