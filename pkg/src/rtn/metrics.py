"""PSNR, SSIM and temporal warping error, plus the evaluation report and external-metric hook."""

from __future__ import annotations

import json
import math
import shlex
import subprocess
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .flow import BuiltinFlow, FlowField, occlusion_mask, warp
from .videodata import FrameSequence

PERFECT = math.inf
REPORT_SCHEMA = 1


class MetricError(ValueError):
    pass


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def psnr(pred, target) -> float:
    """Peak signal-to-noise ratio in dB for signals in [0, 1]; ``PERFECT`` (inf) when identical."""
    pred, target = _pair(pred, target)
    mse = np.mean((pred - target) ** 2)
    if mse == 0:
        return PERFECT
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _ssim_channel(x, y, win, c1, c2):
    def filt(img):
        out = ndimage.correlate1d(img, win, axis=0, mode="constant")
        out = ndimage.correlate1d(out, win, axis=1, mode="constant")
        r = len(win) // 2
        return out[r:-r, r:-r]

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(pred, target, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with a Gaussian window over valid (fully covered) positions.

    Accepts H x W or H x W x C frames (channel-averaged), or T x H x W x C clips (frame-averaged).
    """
    pred, target = _pair(pred, target)
    if pred.ndim == 4:
        return float(np.mean([ssim(p, t, win_size, sigma, k1, k2) for p, t in zip(pred, target)]))
    if pred.ndim == 2:
        pred, target = pred[..., None], target[..., None]
    if min(pred.shape[:2]) < win_size:
        raise MetricError(f"frame {pred.shape[:2]} smaller than the {win_size}x{win_size} window")
    win = _gaussian_window(win_size, sigma)
    c1, c2 = k1**2, k2**2
    return float(np.mean([_ssim_channel(pred[..., c], target[..., c], win, c1, c2) for c in range(pred.shape[-1])]))


def _flow_pairs(frames: torch.Tensor, provider):
    """Forward (t-1 onto t) and backward (t onto t-1) flows for consecutive frames."""
    out = []
    for t in range(1, frames.shape[0]):
        f = provider.estimate(frames[t : t + 1], frames[t - 1 : t])
        b = provider.estimate(frames[t - 1 : t], frames[t : t + 1])
        out.append((f, b))
    return out


def warping_error(seq, flow=None, tau: float = 0.01, flow_frames=None, flows=None) -> float:
    """Mean squared flow-aligned difference of consecutive frames over visible pixels, averaged over pairs.

    Flows are estimated on ``flow_frames`` (e.g. the clean clip) when given, else on ``seq`` itself.
    ``flows`` may instead supply the per-pair ``(forward, backward)`` FlowFields directly.
    Per-pixel error is averaged over channels. Returns NaN when every pair is fully occluded.
    """
    arr = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    if arr.shape[0] < 2:
        raise MetricError("warping error needs at least two frames")
    y = torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(torch.float64)
    if flows is None:
        src = flow_frames if flow_frames is not None else arr
        src = src.frames if isinstance(src, FrameSequence) else np.asarray(src)
        if src.shape[:3] != arr.shape[:3]:
            raise MetricError("flow source frames do not match the evaluated sequence")
        src_t = torch.from_numpy(np.ascontiguousarray(src.transpose(0, 3, 1, 2))).to(torch.float64)
        flows = _flow_pairs(src_t, flow or BuiltinFlow())
    errors = []
    for t, (f, b) in enumerate(flows, start=1):
        f = f if isinstance(f, FlowField) else FlowField.from_flow(f)
        b = b if isinstance(b, FlowField) else FlowField.from_flow(b)
        fwd = f.flow.to(torch.float64)
        visible = occlusion_mask(fwd, b.flow.to(torch.float64), tau) & f.valid
        warped = warp(y[t - 1 : t], fwd)
        sq = ((y[t : t + 1] - warped) ** 2).mean(1)
        n = int(visible.sum())
        if n == 0:
            continue
        errors.append(float(sq[visible].sum()) / n)
    if not errors:
        return math.nan
    return float(np.mean(errors))


def per_frame(fn, pred: FrameSequence, target: FrameSequence) -> list[float]:
    if pred.frames.shape != target.frames.shape:
        raise MetricError(f"sequences differ: {pred.frames.shape} vs {target.frames.shape}")
    return [fn(p, t) for p, t in zip(pred.frames, target.frames)]


def external_metric(command: str, frames_dir) -> float:
    """Run an external scorer: ``command <frames_dir>`` must print one number on stdout."""
    proc = subprocess.run(shlex.split(command) + [str(frames_dir)], capture_output=True, text=True, check=True)
    return float(proc.stdout.strip().split()[-1])


def _encode(v):
    if isinstance(v, float) and math.isinf(v):
        return "perfect"
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def _decode(v):
    if v == "perfect":
        return PERFECT
    if v is None:
        return math.nan
    return v


def write_report(path, report: dict) -> None:
    def enc(obj):
        if isinstance(obj, dict):
            return {k: enc(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [enc(v) for v in obj]
        return _encode(obj)

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(enc({"schema": REPORT_SCHEMA, **report}), indent=2, sort_keys=True))


def read_report(path) -> dict:
    def dec(obj):
        if isinstance(obj, dict):
            return {k: dec(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [dec(v) for v in obj]
        return _decode(obj)

    return dec(json.loads(Path(path).read_text()))


def corpus_mean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return math.nan
    return float(np.mean(vals))
