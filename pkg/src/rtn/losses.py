"""Training objectives and the spatio-temporal patch discriminator.

Clips are (N, T, C, H, W) tensors; a leading batch dim is optional for the reconstruction losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import torch
from torch import nn
import torch.nn.functional as F

from .videodata import lab_to_rgb_tensor, unscale_lab


@dataclass
class LossWeights:
    lambda_1: float = 1.0
    lambda_p: float = 1.0
    lambda_G: float = 0.01

    def __post_init__(self):
        if min(self.lambda_1, self.lambda_p, self.lambda_G) < 0:
            raise ValueError("loss weights must be non-negative")


class FeatureExtractor(Protocol):
    weights: Sequence[float]

    def layers(self, frames: torch.Tensor) -> list[torch.Tensor]:
        """Feature maps for a (B, C, H, W) batch of frames."""
        ...


def _frames(x: torch.Tensor) -> torch.Tensor:
    """(N, T, C, H, W) or (T, C, H, W) -> (N*T, C, H, W)."""
    return x.reshape(-1, *x.shape[-3:])


def _check(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-frame absolute error summed over pixels and channels, averaged over frames."""
    _check(pred, target)
    per_frame = (pred - target).abs().reshape(-1, math.prod(pred.shape[-3:])).sum(1)
    return per_frame.mean()


class RandomFeatures(nn.Module):
    """Frozen, seed-initialised five-stage strided conv pyramid used as a perceptual feature proxy.

    Stages 2-5 are reported, mirroring the relu2..relu5 selection of VGG-style extractors.
    """

    def __init__(self, channels=(16, 32, 64, 64, 64), seed: int = 0, layer_ids=(1, 2, 3, 4), weights=None):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        convs = []
        cin = 3
        for i, c in enumerate(channels):
            conv = nn.Conv2d(cin, c, 3, 1 if i == 0 else 2, 1)
            fan_in = cin * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * math.sqrt(2.0 / fan_in))
                conv.bias.zero_()
            convs.append(conv)
            cin = c
        self.convs = nn.ModuleList(convs)
        self.layer_ids = tuple(layer_ids)
        self.weights = list(weights) if weights is not None else [1.0] * len(self.layer_ids)
        if len(self.weights) != len(self.layer_ids):
            raise ValueError("one weight per reported layer")
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # always in eval mode; has no dropout/bn but keeps the contract explicit
        return super().train(False)

    def layers(self, frames: torch.Tensor) -> list[torch.Tensor]:
        x = frames
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        elif x.shape[1] != 3:
            raise ValueError(f"feature extractor takes 1 or 3 channels, got {x.shape[1]}")
        x = x.to(self.convs[0].weight.dtype)
        out = []
        for i, conv in enumerate(self.convs):
            x = F.relu(conv(x))
            if i in self.layer_ids:
                out.append(x)
        return out


def perceptual_loss(pred: torch.Tensor, target: torch.Tensor, fx: FeatureExtractor) -> torch.Tensor:
    """Weighted per-layer mean absolute feature difference, averaged over frames."""
    _check(pred, target)
    a, b = _frames(pred), _frames(target)
    fa, fb = fx.layers(a), fx.layers(b)
    total = pred.new_zeros(())
    for w, pa, pb in zip(fx.weights, fa, fb):
        per_frame = (pa - pb).abs().reshape(pa.shape[0], -1).mean(1)
        total = total + w * per_frame.mean()
    return total


class TemporalDiscriminator(nn.Module):
    """Stack of 3-D convolutions scoring every spatio-temporal patch of a clip."""

    min_frames = 4

    def __init__(self, in_channels: int = 3, base: int = 32):
        super().__init__()
        chans = [in_channels, base, base * 2, base * 4, 1]
        strides = [(1, 2, 2), (2, 2, 2), (1, 2, 2), (1, 2, 2)]
        for i in range(4):
            self.add_module(f"conv{i + 1}", nn.Conv3d(chans[i], chans[i + 1], (3, 4, 4), strides[i], (1, 1, 1)))
        self.act = nn.LeakyReLU(0.2)

    @property
    def stride_product(self) -> tuple[int, int, int]:
        return (2, 16, 16)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        """(N, T, C, H, W) -> (N, T', H', W', 1) patch scores."""
        if clip.shape[1] < self.min_frames:
            raise ValueError(f"discriminator needs at least {self.min_frames} frames, got {clip.shape[1]}")
        x = clip.permute(0, 2, 1, 3, 4)
        for i in range(4):
            x = getattr(self, f"conv{i + 1}")(x)
            if i < 3:
                x = self.act(x)
        return x.permute(0, 2, 3, 4, 1)


def score(score_map: torch.Tensor) -> torch.Tensor:
    """Per-clip discriminator output: the mean of its patch score map."""
    return score_map.reshape(score_map.shape[0], -1).mean(1)


def d_hinge_loss(real_scores, fake_scores) -> torch.Tensor:
    real_scores, fake_scores = torch.as_tensor(real_scores), torch.as_tensor(fake_scores)
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def g_adv_loss(fake_scores) -> torch.Tensor:
    return -torch.as_tensor(fake_scores).mean()


def lab_clip_to_rgb(lab_scaled: torch.Tensor) -> torch.Tensor:
    """(..., 3, H, W) scaled LAB -> RGB, differentiably."""
    return lab_to_rgb_tensor(unscale_lab(lab_scaled, dim=-3), dim=-3)


def total_loss(pred, target, fx, fake_scores, w: LossWeights | None = None, colorize: bool = False,
               perc_pred=None, perc_target=None) -> dict:
    """Weighted objective. Returns the components and ``total``.

    In colorize mode ``pred``/``target`` are scaled-LAB clips: L1 is taken on them directly and the
    perceptual term on their RGB rendering (pass ``perc_pred``/``perc_target`` to reuse it).
    """
    w = w or LossWeights()
    l1 = l1_loss(pred, target)
    if colorize:
        perc_pred = lab_clip_to_rgb(pred) if perc_pred is None else perc_pred
        perc_target = lab_clip_to_rgb(target) if perc_target is None else perc_target
    else:
        perc_pred, perc_target = pred, target
    perc = perceptual_loss(perc_pred, perc_target, fx) if w.lambda_p else pred.new_zeros(())
    g = g_adv_loss(fake_scores) if fake_scores is not None else pred.new_zeros(())
    total = w.lambda_1 * l1 + w.lambda_p * perc + w.lambda_G * g
    return {"total": total, "l1": l1, "perc": perc, "g": g}


def combine(l1, perc, g, w: LossWeights | None = None):
    """Weighted sum of precomputed components."""
    w = w or LossWeights()
    return w.lambda_1 * l1 + w.lambda_p * perc + w.lambda_G * g
