"""Optical flow: differentiable backward warping, a classical block-matching estimator,
forward/backward consistency checks and the on-disk flow cache."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import torch
import torch.nn.functional as F

CACHE_MAGIC = b"RTNF"


@dataclass
class FlowField:
    """Backward flow: ``flow[..., 0:2, y, x] = (dx, dy)`` maps target pixels to source positions.

    ``flow`` is (N, 2, H, W); ``valid`` is (N, H, W) and marks displacements landing inside the frame.
    """

    flow: torch.Tensor
    valid: torch.Tensor

    @classmethod
    def from_flow(cls, flow: torch.Tensor) -> "FlowField":
        if flow.ndim == 3:
            flow = flow.unsqueeze(0)
        return cls(flow, in_bounds(flow))

    @property
    def shape(self):
        return self.flow.shape

    def numpy(self) -> np.ndarray:
        """Single field as H x W x 2."""
        return self.flow[0].detach().cpu().numpy().transpose(1, 2, 0)


@runtime_checkable
class FlowProvider(Protocol):
    trainable: bool

    def estimate(self, frame_a: torch.Tensor, frame_b: torch.Tensor) -> FlowField:
        """Flow sampling ``frame_b`` onto the grid of ``frame_a``; frames are (N, C, H, W)."""
        ...


def _base_grid(n, h, w, dtype, device):
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=dtype, device=device),
        torch.arange(w, dtype=dtype, device=device),
        indexing="ij",
    )
    return torch.stack([xs, ys]).unsqueeze(0).expand(n, 2, h, w)


def in_bounds(flow: torch.Tensor) -> torch.Tensor:
    n, _, h, w = flow.shape
    pos = _base_grid(n, h, w, flow.dtype, flow.device) + flow
    x, y = pos[:, 0], pos[:, 1]
    return (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)


def warp(feature: torch.Tensor, flow) -> torch.Tensor:
    """Bilinear backward warp of (N, C, H, W) ``feature`` by ``flow`` with border replication.

    ``out[p] = feature(p + flow[p])``. Differentiable in both arguments.
    """
    if isinstance(flow, FlowField):
        flow = flow.flow
    if flow.ndim == 3:
        flow = flow.unsqueeze(0)
    if feature.shape[-2:] != flow.shape[-2:] or flow.shape[1] != 2:
        raise ValueError(f"feature {tuple(feature.shape)} and flow {tuple(flow.shape)} do not match")
    n, _, h, w = feature.shape
    if flow.shape[0] != n:
        flow = flow.expand(n, -1, -1, -1)
    pos = _base_grid(n, h, w, flow.dtype, flow.device) + flow
    # align_corners=True maps -1/+1 onto pixel centres 0 and W-1
    gx = 2.0 * pos[:, 0] / max(w - 1, 1) - 1.0
    gy = 2.0 * pos[:, 1] / max(h - 1, 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1).to(feature.dtype)
    return F.grid_sample(feature, grid, mode="bilinear", padding_mode="border", align_corners=True)


def occlusion_mask(flow_fwd, flow_bwd, tau: float = 0.01) -> torch.Tensor:
    """Forward/backward consistency; True where the pixel is visible (non-occluded).

    ``flow_fwd`` lives on the grid of the frame being checked, ``flow_bwd`` on the grid it points into.
    """
    f = flow_fwd.flow if isinstance(flow_fwd, FlowField) else flow_fwd
    b = flow_bwd.flow if isinstance(flow_bwd, FlowField) else flow_bwd
    if f.shape != b.shape:
        raise ValueError(f"flow shapes differ: {tuple(f.shape)} vs {tuple(b.shape)}")
    b_at = warp(b, f)
    residual = ((f + b_at) ** 2).sum(1)
    bound = tau * ((f**2).sum(1) + (b_at**2).sum(1)) + 0.5
    return residual <= bound


# ---------------------------------------------------------------------------
# built-in estimator


def _luma(frame: torch.Tensor) -> torch.Tensor:
    if frame.shape[1] == 1:
        return frame
    w = torch.tensor([0.299, 0.587, 0.114], dtype=frame.dtype, device=frame.device)
    return (frame[:, :3] * w.view(1, 3, 1, 1)).sum(1, keepdim=True)


def _pyr_down(x: torch.Tensor) -> torch.Tensor:
    k1 = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=x.dtype, device=x.device) / 16.0
    k = (k1[:, None] * k1[None, :]).view(1, 1, 5, 5)
    x = F.conv2d(F.pad(x, (2, 2, 2, 2), mode="replicate"), k)
    return x[:, :, ::2, ::2]


def _smooth(x: torch.Tensor, sigma: float) -> torch.Tensor:
    r = int(math.ceil(3 * sigma))
    ax = torch.arange(-r, r + 1, dtype=x.dtype, device=x.device)
    g = torch.exp(-(ax**2) / (2 * sigma**2))
    g = g / g.sum()
    x = F.conv2d(F.pad(x, (r, r, 0, 0), mode="replicate"), g.view(1, 1, 1, -1))
    return F.conv2d(F.pad(x, (0, 0, r, r), mode="replicate"), g.view(1, 1, -1, 1))


def _median(flow: torch.Tensor, k: int) -> torch.Tensor:
    p = k // 2
    u = F.pad(flow, (p, p, p, p), mode="replicate").unfold(2, k, 1).unfold(3, k, 1)
    return u.reshape(*flow.shape, k * k).median(-1).values


def _displacements(radius: int):
    offs = [(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    # nearest-to-zero first so argmin ties resolve toward small motion
    return sorted(offs, key=lambda d: (d[0] ** 2 + d[1] ** 2, d[1], d[0]))


def _match_level(a, b, init, radius, patch):
    """Integer SSD search around ``init`` (N, 2, H, W); returns refined flow."""
    n, _, h, w = a.shape
    base = warp(b, init)
    pad = radius
    bp = F.pad(base, (pad, pad, pad, pad), mode="replicate")
    offs = _displacements(radius)
    costs = []
    box = torch.ones(1, 1, patch, patch, dtype=a.dtype, device=a.device)
    p = patch // 2
    for dx, dy in offs:
        shifted = bp[:, :, pad + dy : pad + dy + h, pad + dx : pad + dx + w]
        d2 = (a - shifted) ** 2
        costs.append(F.conv2d(F.pad(d2, (p, p, p, p), mode="replicate"), box))
    cost = torch.cat(costs, 1)
    idx = cost.argmin(1)
    table = torch.tensor(offs, dtype=a.dtype, device=a.device)
    delta = table[idx].permute(0, 3, 1, 2)
    return init + delta


@torch.no_grad()
def builtin_flow(frame_a: torch.Tensor, frame_b: torch.Tensor, levels: int = 3, radius: int = 4,
                 patch: int = 7, sigma: float = 1.0, median: int = 5) -> FlowField:
    """Coarse-to-fine exhaustive block matching; flow samples ``frame_b`` onto ``frame_a``.

    Luma is pre-smoothed with a Gaussian of std ``sigma`` (0 disables) and each level's flow is
    median-filtered over ``median`` x ``median`` (0 or 1 disables) before being passed down.

    Frames are (N, C, H, W) or (C, H, W). Deterministic, integer-valued at every level.
    """
    if frame_a.ndim == 3:
        frame_a, frame_b = frame_a.unsqueeze(0), frame_b.unsqueeze(0)
    if frame_a.shape != frame_b.shape:
        raise ValueError("frames must have identical shapes")
    h, w = frame_a.shape[-2:]
    min_size = 2**levels * 8
    if h < min_size or w < min_size:
        raise ValueError(f"frames {h}x{w} too small for {levels} pyramid levels (need {min_size})")
    a = _luma(frame_a.detach().to(torch.float64))
    b = _luma(frame_b.detach().to(torch.float64))
    if sigma > 0:
        a, b = _smooth(a, sigma), _smooth(b, sigma)
    pyr = [(a, b)]
    for _ in range(levels - 1):
        a, b = _pyr_down(a), _pyr_down(b)
        pyr.append((a, b))
    flow = None
    for a, b in reversed(pyr):
        n, _, lh, lw = a.shape
        if flow is None:
            flow = torch.zeros(n, 2, lh, lw, dtype=a.dtype)
        else:
            flow = 2.0 * F.interpolate(flow, size=(lh, lw), mode="nearest")
        flow = _match_level(a, b, flow, radius, patch)
        if median > 1:
            flow = _median(flow, median)
    flow = flow.to(frame_a.dtype)
    return FlowField(flow, in_bounds(flow))


class BuiltinFlow:
    """Default, non-trainable flow provider backed by :func:`builtin_flow`."""

    trainable = False

    def __init__(self, levels: int = 3, radius: int = 4, patch: int = 7, sigma: float = 1.0, median: int = 5):
        self.levels = levels
        self.radius = radius
        self.patch = patch
        self.sigma = sigma
        self.median = median

    def estimate(self, frame_a, frame_b) -> FlowField:
        levels = self.levels
        h, w = frame_a.shape[-2:]
        while levels > 1 and min(h, w) < 2**levels * 8:
            levels -= 1
        return builtin_flow(frame_a, frame_b, levels, self.radius, self.patch, self.sigma, self.median)


class ZeroFlow:
    """Provider returning zero motion; useful for static content and tests."""

    trainable = False

    def estimate(self, frame_a, frame_b) -> FlowField:
        if frame_a.ndim == 3:
            frame_a = frame_a.unsqueeze(0)
        n, _, h, w = frame_a.shape
        flow = torch.zeros(n, 2, h, w, dtype=frame_a.dtype, device=frame_a.device)
        return FlowField(flow, torch.ones(n, h, w, dtype=torch.bool, device=frame_a.device))


def pair_flows(frames: torch.Tensor, provider) -> tuple[list, list]:
    """Flows for a (T, C, H, W) clip.

    Returns ``(prev_to_cur, next_to_cur)`` where ``prev_to_cur[t]`` warps frame t-1 onto t
    (``None`` at t=0) and ``next_to_cur[t]`` warps frame t+1 onto t (``None`` at t=T-1).
    """
    t_len = frames.shape[0]
    fwd = [None] + [provider.estimate(frames[t : t + 1], frames[t - 1 : t]) for t in range(1, t_len)]
    bwd = [provider.estimate(frames[t : t + 1], frames[t + 1 : t + 2]) for t in range(t_len - 1)] + [None]
    return fwd, bwd


# ---------------------------------------------------------------------------
# flow cache: 'RTNF' + H + W as little-endian int32, then H*W*2 little-endian float32 (dx, dy interleaved)


def write_flow(path, field) -> None:
    arr = field.numpy() if isinstance(field, FlowField) else np.asarray(field)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ValueError(f"expected H x W x 2 flow, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<ii", h, w))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_flow(path) -> FlowField:
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not an RTNF flow file")
    h, w = struct.unpack("<ii", data[4:12])
    expected = 12 + h * w * 2 * 4
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    arr = np.frombuffer(data[12:], dtype="<f4").reshape(h, w, 2).astype(np.float32)
    return FlowField.from_flow(torch.from_numpy(arr.transpose(2, 0, 1).copy()))
