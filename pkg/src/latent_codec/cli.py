"""Command-line surface for the latent codec.

Exit codes: 0 success, 2 usage, 3 I/O, 4 format, 5 numeric/degenerate.
"""

from __future__ import annotations

import argparse
import glob
import sys
from pathlib import Path

from . import bench
from .errors import (
    BadMagicError,
    FormatError,
    NumericError,
    ValidationError,
)
from .container import compress_image, decompress_image, read_container, write_container
from .figures import default_figure_path, render_rate_distortion
from .images import read_image, write_image
from .latents import LAYOUT_PRESETS, LatentLayout, read_lif
from .metrics import psnr, ssim
from .pca import fit_linear_codec, read_model, write_model
from .quantize import (
    KCB_MAGIC,
    RANGE_MAGIC,
    SCOPES,
    calibrate_int8_range,
    fit_codebook,
    read_codebook,
    read_range,
    write_codebook,
    write_range,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5


def _layout_name(factor: int, channels: int) -> str:
    for name, (f, c) in LAYOUT_PRESETS.items():
        if (f, c) == (factor, channels):
            return name
    return f"f{factor}c{channels}"


def _load_images_dir(directory: str) -> list:
    root = Path(directory)
    if not root.is_dir():
        raise ValidationError(f"{directory!r} is not a directory")
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in (".png", ".ppm"))
    if not paths:
        raise ValidationError(f"no PNG/PPM images found in {directory!r}")
    return [read_image(p) for p in paths]


def _load_latent_sources(args) -> list:
    """Latents straight from LIF files, or by encoding images with a model."""
    has_lif = bool(args.latents)
    has_imgs = bool(args.images)
    if has_lif == has_imgs:
        raise ValidationError("provide exactly one latent source: --latents or --images")
    if has_lif:
        paths = sorted(glob.glob(args.latents))
        if not paths:
            raise ValidationError(f"no files match --latents {args.latents!r}")
        return [read_lif(Path(p).read_bytes()) for p in paths]
    if not args.model:
        raise ValidationError("--images needs --model to encode with")
    from .pca import encode

    model = read_model(Path(args.model).read_bytes())
    return [encode(model, img) for img in _load_images_dir(args.images)]


def _load_dictionary(path: str):
    data = Path(path).read_bytes()
    if data[:4] == KCB_MAGIC:
        return read_codebook(data)
    if data[:4] == RANGE_MAGIC:
        return read_range(data)
    raise BadMagicError(f"{path!r} is neither a KCB1 codebook nor an IR81 range file")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit_pca(args) -> int:
    patch_dim = 3 * args.factor * args.factor
    if args.channels > patch_dim:
        raise ValidationError(
            f"--channels {args.channels} exceeds 3*factor^2 = {patch_dim}"
        )
    layout = LatentLayout(
        args.factor, args.channels, model_id=args.model_id or _layout_name(args.factor, args.channels)
    )
    images = _load_images_dir(args.images)
    model = fit_linear_codec(images, layout, seed=args.seed, max_patches=args.max_patches)
    Path(args.out).write_bytes(write_model(model))
    print(f"model {layout.model_id}: {len(images)} images, "
          f"{model.train_stats[0]} patches, retained variance {model.retained_variance:.6f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_fit_codebook(args) -> int:
    latents = _load_latent_sources(args)
    cb = fit_codebook(
        latents, args.scope, k=args.k, seed=args.seed, max_samples=args.max_samples
    )
    Path(args.out).write_bytes(write_codebook(cb))
    for unit, traj in enumerate(cb.sse_trajectories):
        print(f"unit {unit}: {len(traj)} iterations, SSE {traj[0]:.6g} -> {traj[-1]:.6g}")
    if cb.degenerate:
        print("warning: degenerate codebook (fewer distinct values than k)", file=sys.stderr)
    print(f"wrote {args.out} ({cb.source_count} values, k={cb.k}, scope={cb.scope})")
    return EXIT_OK


def cmd_calibrate_range(args) -> int:
    latents = _load_latent_sources(args)
    rng = calibrate_int8_range(latents)
    Path(args.out).write_bytes(write_range(rng))
    print(f"calibrated range [{rng.min:.6g}, {rng.max:.6g}], bin width {rng.bin_width:.6g}")
    print(f"wrote {args.out}")
    return EXIT_OK


_MODE_FLAGS = {"raw": "raw-f32", "int8": "static-int8", "kmeans": "kmeans-8bit"}


def cmd_compress(args) -> int:
    image = read_image(args.input)
    model = read_model(Path(args.model).read_bytes())
    mode = _MODE_FLAGS[args.mode]
    dictionary = _load_dictionary(args.dict) if args.dict else None
    container = compress_image(image, model, mode, dictionary, tile_size=args.tile_size)
    data = write_container(container)
    Path(args.out).write_bytes(data)
    rows, cols = container.grid
    print(f"{args.input}: {image.height}x{image.width} -> {rows}x{cols} tiles, mode {mode}")
    print(f"payload {container.payload_bytes} B, total {len(data)} B")
    return EXIT_OK


def cmd_decompress(args) -> int:
    container = read_container(Path(args.input).read_bytes())
    model = read_model(Path(args.model).read_bytes())
    image = decompress_image(container, model)
    write_image(image, args.out)
    print(f"{args.input}: {container.quant_mode} -> {image.height}x{image.width} {args.out}")
    if args.ref:
        ref = read_image(args.ref)
        print(f"PSNR {psnr(ref, image):.4f} dB, SSIM {ssim(ref, image):.6f}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    manifest = bench.parse_manifest(args.manifest)
    workers = bench.worker_count(args.workers)
    rows = bench.run_benchmark(manifest, workers=workers)
    bench.write_csv(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    if not args.no_figures:
        fig_path = Path(args.figures) if args.figures else default_figure_path(args.out)
        if fig_path.is_dir():
            fig_path = fig_path / default_figure_path(args.out).name
        render_rate_distortion(rows, fig_path)
        print(f"wrote {fig_path}")
    failures = sum(1 for r in rows if r["error"])
    if failures:
        print(f"warning: {failures} row(s) recorded errors", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-codec",
        description="Latent-space image codec: fit models, compress tiles, benchmark rate-distortion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-pca", help="fit a patch-PCA encoder/decoder model")
    p.add_argument("--images", required=True, help="directory of PNG/PPM training tiles")
    p.add_argument("--factor", type=int, required=True, help="spatial downsample factor f")
    p.add_argument("--channels", type=int, required=True, help="latent channels c")
    p.add_argument("--model-id", default=None, help="identifier stored in the model (<=16 bytes)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-patches", type=int, default=1 << 17)
    p.add_argument("--out", required=True, help="output PCA1 model file")
    p.set_defaults(func=cmd_fit_pca)

    p = sub.add_parser("fit-codebook", help="learn a K-means codebook over latent values")
    p.add_argument("--latents", default=None, help="glob of LIF files")
    p.add_argument("--images", default=None, help="directory of images (needs --model)")
    p.add_argument("--model", default=None, help="PCA1 model used to encode --images")
    p.add_argument("--k", type=int, default=256, help="codebook size (256 in production)")
    p.add_argument("--scope", choices=SCOPES, default="global")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-samples", type=int, default=1 << 20)
    p.add_argument("--out", required=True, help="output KCB1 codebook file")
    p.set_defaults(func=cmd_fit_codebook)

    p = sub.add_parser("calibrate-range", help="calibrate the static int8 value range")
    p.add_argument("--latents", default=None, help="glob of LIF files")
    p.add_argument("--images", default=None, help="directory of images (needs --model)")
    p.add_argument("--model", default=None, help="PCA1 model used to encode --images")
    p.add_argument("--out", required=True, help="output IR81 range file")
    p.set_defaults(func=cmd_calibrate_range)

    p = sub.add_parser("compress", help="compress one image to a PLC1 container")
    p.add_argument("--input", required=True, help="PNG/PPM image")
    p.add_argument("--model", required=True, help="PCA1 model file")
    p.add_argument("--mode", choices=sorted(_MODE_FLAGS), required=True)
    p.add_argument("--dict", default=None, help="KCB1 codebook or IR81 range file")
    p.add_argument("--tile-size", type=int, default=256)
    p.add_argument("--out", required=True, help="output PLC1 container")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode a PLC1 container back to an image")
    p.add_argument("--input", required=True, help="PLC1 container")
    p.add_argument("--model", required=True, help="PCA1 model file")
    p.add_argument("--out", required=True, help="output PNG/PPM path")
    p.add_argument("--ref", default=None, help="original image; prints PSNR/SSIM against it")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("benchmark", help="run the manifest and write CSV + figures")
    p.add_argument("--manifest", required=True, help="JSON benchmark manifest")
    p.add_argument("--out", required=True, help="output CSV report")
    p.add_argument("--figures", default=None, help="figure output path or directory")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p.add_argument("--workers", type=int, default=None,
                   help=f"concurrent entries (env {bench.THREADS_ENV_VAR} overrides)")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
