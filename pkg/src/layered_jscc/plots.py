"""Figures rendered from result CSVs only."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import read_results_csv  # noqa: E402

PNG_META = {"Software": None}


def _save(fig, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120, metadata=PNG_META)
    plt.close(fig)
    return out


def psnr_vs_snr(csv_path, out, title: str | None = None) -> Path:
    """One curve per (train SNR, subset): mean PSNR over the test SNR axis."""
    rows = read_results_csv(csv_path)
    curves = defaultdict(list)
    for r in rows:
        curves[(r["scheme"], r["train_snr"], r["subset"])].append((r["test_snr"], r["mean_psnr"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (scheme, train_snr, subset), pts in sorted(curves.items(), key=lambda kv: str(kv[0])):
        pts.sort()
        label = f"{subset}" + (f" @ {train_snr:g} dB" if train_snr is not None else "")
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=3, label=label)
    ax.set_xlabel("test SNR (dB)")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title)
    return _save(fig, out)


def psnr_vs_ratio(csv_path, out, title: str | None = None) -> Path:
    """PSNR after each prefix against cumulative bandwidth ratio, one curve per L."""
    rows = read_results_csv(csv_path)
    curves = defaultdict(list)
    for r in rows:
        curves[r["L"]].append((r["cum_ratio"], r["mean_psnr"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for L, pts in sorted(curves.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"L={L}")
    ax.set_xlabel("k/n")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    return _save(fig, out)


def tradeoff(csv_path, out, x_subset: str, y_subset: str, title: str | None = None) -> Path:
    """Frontier of one subset's PSNR against another's across the weight grid."""
    rows = read_results_csv(csv_path)
    by_w = defaultdict(dict)
    for r in rows:
        by_w[r["weight"]][r["subset"]] = r["mean_psnr"]
    pts = sorted((w, d[x_subset], d[y_subset]) for w, d in by_w.items()
                 if x_subset in d and y_subset in d)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([p[1] for p in pts], [p[2] for p in pts], marker="o")
    for w, x, y in pts:
        ax.annotate(f"{w:g}", (x, y), fontsize=7)
    ax.set_xlabel(f"PSNR {x_subset} (dB)")
    ax.set_ylabel(f"PSNR {y_subset} (dB)")
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    return _save(fig, out)


def baseline_curve(csv_path, out) -> Path:
    import csv

    with open(csv_path, newline="") as f:
        rows = list(csv.DictReader(ln for ln in f if not ln.startswith("#")))
    curves = defaultdict(list)
    for r in rows:
        curves[float(r["snr_db"])].append((int(r["prefix"]), float(r["mean_psnr"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for snr, pts in sorted(curves.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label=f"{snr:g} dB")
    ax.set_xlabel("layers received")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, out)
