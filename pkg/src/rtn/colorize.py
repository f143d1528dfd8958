"""Reference-based colorization: nonlocal colour transfer from one colourised frame,
refined by the recurrent network in LAB space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .flow import BuiltinFlow
from .videodata import ColorSpace, FrameSequence, rgb_to_lab_tensor, scale_lab

DEFAULT_TEMPERATURE = 0.01


class CorrespondenceEncoder(nn.Module):
    """Quarter-resolution features of the luminance channel, unit-normalised per position."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.conv1 = nn.Conv2d(1, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 2, 1)
        self.conv3 = nn.Conv2d(channels, channels, 3, 2, 1)
        self.conv4 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, lum: torch.Tensor) -> torch.Tensor:
        x = self.act(self.conv1(lum))
        x = self.act(self.conv2(x))
        x = self.act(self.conv3(x))
        return F.normalize(self.conv4(x), dim=1, eps=1e-6)


@dataclass
class ColorReference:
    """Scaled-LAB reference frame (N, 3, H, W) and its correspondence features (N, C, Hc, Wc)."""

    frame_lab: torch.Tensor
    features: torch.Tensor

    @property
    def ab(self) -> torch.Tensor:
        return self.frame_lab[:, 1:3]


def correspondence(gray_feat: torch.Tensor, ref_feat: torch.Tensor, temperature: float) -> torch.Tensor:
    """Row-stochastic (N, HcWc, HcWc) matching matrix from unit-norm feature maps."""
    if gray_feat.shape != ref_feat.shape:
        raise ValueError(f"feature maps differ: {tuple(gray_feat.shape)} vs {tuple(ref_feat.shape)}")
    q = gray_feat.flatten(2).transpose(1, 2)
    k = ref_feat.flatten(2)
    return torch.softmax((q @ k) / temperature, dim=-1)


def coarse_color_transfer(gray_feat: torch.Tensor, ref: ColorReference,
                          temperature: float = DEFAULT_TEMPERATURE) -> torch.Tensor:
    """Coarse AB (N, 2, H, W): reference chroma averaged under feature similarity, then upsampled."""
    n, _, hc, wc = gray_feat.shape
    h, w = ref.frame_lab.shape[-2:]
    ref_ab = F.adaptive_avg_pool2d(ref.ab, (hc, wc)) if (hc, wc) != (h, w) else ref.ab
    attn = correspondence(gray_feat, ref.features, temperature)
    ab = (attn @ ref_ab.flatten(2).transpose(1, 2)).transpose(1, 2).reshape(n, 2, hc, wc)
    if (hc, wc) != (h, w):
        ab = F.interpolate(ab, size=(h, w), mode="bilinear", align_corners=False)
    return ab


def make_reference(model, ref_lab_scaled: torch.Tensor) -> ColorReference:
    """Reference from a scaled-LAB (N, 3, H, W) frame using the model's correspondence encoder."""
    return ColorReference(ref_lab_scaled, model.corr(ref_lab_scaled[:, :1]))


def colorize_clip(model, lum: torch.Tensor, ref: ColorReference, flows_prev=None, flows_next=None,
                  flow_provider=None, temperature: float = DEFAULT_TEMPERATURE, coarse: bool = True,
                  return_masks: bool = False):
    """Predict scaled AB (N, T, 2, H, W) for a scaled-L clip (N, T, 1, H, W)."""
    n, t_len = lum.shape[:2]
    coarse_ab = []
    for t in range(t_len):
        if coarse:
            feat = model.corr(lum[:, t])
            coarse_ab.append(coarse_color_transfer(feat, ref, temperature))
        else:
            coarse_ab.append(lum.new_zeros(n, 2, *lum.shape[-2:]))
    inp = torch.cat([lum, torch.stack(coarse_ab, 1)], 2)
    if flows_prev is None or flows_next is None:
        from .model.network import clip_flows

        flows_prev, flows_next = clip_flows(lum, flow_provider or BuiltinFlow())
    return model(inp, flows_prev, flows_next, return_masks=return_masks)


def luminance(seq: FrameSequence) -> np.ndarray:
    """L channel (T, H, W) in standard units for a GRAY, RGB or LAB sequence."""
    if seq.color_space is ColorSpace.LAB:
        return seq.frames[..., 0]
    rgb = seq.frames if seq.color_space is ColorSpace.RGB else np.repeat(seq.frames, 3, axis=-1)
    return rgb_to_lab_tensor(torch.from_numpy(rgb.astype(np.float64)))[..., 0].numpy().astype(np.float32)


@torch.no_grad()
def colorize_sequence(gray: FrameSequence, ref_rgb: np.ndarray, model, flow=None, ref_index: int = 0,
                      temperature: float = DEFAULT_TEMPERATURE) -> FrameSequence:
    """Colourise ``gray`` from one colourised frame ``ref_rgb`` (H x W x 3 in [0, 1]).

    Returns a LAB sequence whose L channel is the input luminance, untouched.
    """
    from .model.network import Mode

    if model.cfg.mode is not Mode.COLORIZE:
        raise ValueError("colorize_sequence needs COLORIZE-mode weights")
    if not 0 <= ref_index < len(gray):
        raise ValueError(f"reference index {ref_index} outside sequence of length {len(gray)}")
    ref_rgb = np.asarray(ref_rgb, dtype=np.float64)
    if ref_rgb.shape[:2] != gray.frames.shape[1:3]:
        raise ValueError(f"reference {ref_rgb.shape[:2]} does not match frames {gray.frames.shape[1:3]}")
    if ref_rgb.ndim == 2 or ref_rgb.shape[-1] == 1:
        ref_rgb = np.repeat(ref_rgb.reshape(*ref_rgb.shape[:2], 1), 3, axis=-1)
    lum = luminance(gray)
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    ref_lab = scale_lab(rgb_to_lab_tensor(torch.from_numpy(ref_rgb)), dim=-1).permute(2, 0, 1)[None].to(dtype)
    ref = make_reference(model, ref_lab)
    lum_t = torch.from_numpy(lum / 100.0).to(dtype)[None, :, None]
    ab = colorize_clip(model, lum_t, ref, flow_provider=flow or BuiltinFlow(), temperature=temperature)
    model.train(was_training)
    ab = (ab[0] * 128.0).clamp(-128.0, 127.0).permute(0, 2, 3, 1).numpy().astype(np.float32)
    out = np.concatenate([lum[..., None], ab], axis=-1)
    return FrameSequence(out, ColorSpace.LAB, gray.fps)
