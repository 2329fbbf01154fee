"""CSV and plot output for sweep rows."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluate import CSV_FIELDS  # noqa: E402

_FLOAT_FIELDS = ("ul_snr_db", "dl_snr_db", "psnr_db", "ms_ssim", "rate")


def write_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if k in _FLOAT_FIELDS else row[k] for k in CSV_FIELDS})
    return path


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in _FLOAT_FIELDS:
            row[key] = float(row[key])
    return rows


def _line_plot(rows, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    by_mode = defaultdict(list)
    for r in rows:
        by_mode[(r["run_id"], r["mode"])].append((r["ul_snr_db"], r["psnr_db"]))
    for (run_id, mode), pts in sorted(by_mode.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{mode} ({run_id})")
    ax.set_xlabel("SL-SNR (dB)")
    ax.set_ylabel("PSNR (dB, MAX = 1)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _heatmap(rows, path: Path) -> Path:
    uls = sorted({r["ul_snr_db"] for r in rows})
    dls = sorted({r["dl_snr_db"] for r in rows})
    grid = np.full((len(uls), len(dls)), np.nan)
    for r in rows:
        grid[uls.index(r["ul_snr_db"]), dls.index(r["dl_snr_db"])] = r["psnr_db"]
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(grid, origin="lower", cmap="viridis")
    ax.set_xticks(range(len(dls)), [f"{d:g}" for d in dls])
    ax.set_yticks(range(len(uls)), [f"{u:g}" for u in uls])
    ax.set_xlabel("DL-SNR (dB)")
    ax.set_ylabel("UL-SNR (dB)")
    fig.colorbar(im, ax=ax, label="PSNR (dB, MAX = 1)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_report(rows: list[dict], out_dir: str | Path, stem: str = "sweep") -> dict[str, Path]:
    """Write ``<stem>.csv`` plus a PSNR-vs-SNR line plot (diagonal rows) and a UL x DL heatmap per run."""
    if not rows:
        raise ValueError("emit_report needs at least one row")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create report directory {out}: {err}") from err
    files = {"csv": write_csv(rows, out / f"{stem}.csv")}
    diagonal = [r for r in rows if r["ul_snr_db"] == r["dl_snr_db"]]
    off_diagonal = len(diagonal) < len(rows)
    if diagonal and not off_diagonal:
        files["line"] = _line_plot(diagonal, out / f"{stem}_psnr.png")
    if off_diagonal:
        for run_id in sorted({r["run_id"] for r in rows}):
            sub = [r for r in rows if r["run_id"] == run_id]
            files[f"heatmap_{run_id}"] = _heatmap(sub, out / f"{stem}_{run_id}_heatmap.png")
    return files
