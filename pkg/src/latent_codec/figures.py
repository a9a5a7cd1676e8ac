"""Rate-distortion figures rendered next to the benchmark CSV."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_QUANT_MARKERS = {"raw": "o", "int8": "s", "kmeans": "^"}
_PALETTE = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def _numeric(value) -> float | None:
    try:
        out = float(value)
    except (TypeError, ValueError):
        return None
    if not math.isfinite(out):
        return None
    return out


def render_rate_distortion(rows: list[dict], path: str | Path) -> None:
    """Scatter PSNR and SSIM against payload bytes for every successful row."""
    fig, (ax_psnr, ax_ssim) = plt.subplots(1, 2, figsize=(11, 4.5))

    layouts = []
    for row in rows:
        if row["kind"] == "codec" and row["layout"] not in layouts:
            layouts.append(row["layout"])
    colors = {name: _PALETTE[i % len(_PALETTE)] for i, name in enumerate(layouts)}

    seen_labels = set()
    for row in rows:
        if row.get("error"):
            continue
        bytes_ = _numeric(row["payload_bytes"])
        psnr_db = _numeric(row["psnr_db"])
        ssim_val = _numeric(row["ssim"])
        if bytes_ is None or bytes_ <= 0:
            continue
        if row["kind"] == "reference":
            label = row["quant"]
            style = dict(color="black", marker="x", s=45)
        else:
            label = f"{row['layout']} {row['quant']}"
            style = dict(
                color=colors.get(row["layout"], "gray"),
                marker=_QUANT_MARKERS.get(row["quant"], "D"),
                s=40,
                alpha=0.85,
                edgecolors="none",
            )
        show = label if label not in seen_labels else None
        seen_labels.add(label)
        if psnr_db is not None:
            ax_psnr.scatter(bytes_, psnr_db, label=show, **style)
        if ssim_val is not None:
            ax_ssim.scatter(bytes_, ssim_val, label=show if psnr_db is None else None, **style)

    for ax, ylabel in ((ax_psnr, "PSNR (dB)"), (ax_ssim, "SSIM")):
        ax.set_xscale("log", base=2)
        ax.set_xlabel("payload bytes")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
    if seen_labels:
        ax_psnr.legend(fontsize=7, loc="best")
    fig.suptitle("Rate-distortion")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def default_figure_path(csv_path: str | Path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + "_rd.png")
