"""Figures written next to CLI outputs (evaluation reports, training loss curves)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_eval(report: dict, path) -> Path:
    """Per-frame PSNR and SSIM for every sequence in an evaluation report."""
    seqs = report.get("sequences", {})
    fig, (ax_p, ax_s) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    for name, r in sorted(seqs.items()):
        psnr = [v if math.isfinite(v) else float("nan") for v in r.get("psnr_per_frame", [])]
        frames = range(1, len(psnr) + 1)
        ax_p.plot(frames, psnr, marker=".", label=name)
        ax_s.plot(frames, r.get("ssim_per_frame", []), marker=".", label=name)
    ax_p.set_ylabel("PSNR (dB)")
    ax_s.set_ylabel("SSIM")
    ax_s.set_xlabel("frame")
    for ax in (ax_p, ax_s):
        ax.grid(alpha=0.3)
    if 0 < len(seqs) <= 8:
        ax_p.legend(fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_losses(records: list[dict], path) -> Path:
    """Loss components against step; L1 on its own (log) axis since it is a per-frame sum."""
    steps = [r["step"] for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.5))
    ax1.plot(steps, [r["l1"] for r in records], lw=1)
    ax1.set_yscale("log")
    ax1.set_title("L1")
    for key in ("perc", "g", "d"):
        ax2.plot(steps, [r[key] for r in records], lw=1, label=key)
    ax2.set_title("perceptual / adversarial")
    ax2.legend(fontsize="small")
    for ax in (ax1, ax2):
        ax.set_xlabel("step")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
