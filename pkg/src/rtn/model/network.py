"""Recurrent transformer network: encoder, guided-mask fusion, windowed-attention restorer,
decoder, and the bidirectional recurrence over a clip."""

from __future__ import annotations

import copy
import enum
from dataclasses import asdict, dataclass, fields

import torch
from torch import nn
import torch.nn.functional as F

from ..flow import FlowField, pair_flows, warp
from .attention import SwinBlock


class Mode(str, enum.Enum):
    RESTORE = "restore"
    COLORIZE = "colorize"


@dataclass
class ModelConfig:
    encoder_channels: int = 64
    encoder_stride: int = 2
    num_swin_blocks: int = 4
    window_size: int = 8
    num_heads: int = 4
    head_dim: int = 16
    mask_net_layers: int = 3
    mlp_ratio: float = 2.0
    mode: Mode = Mode.RESTORE
    image_channels: int = 3
    corr_channels: int = 32

    def __post_init__(self):
        self.mode = Mode(self.mode)
        for name in ("encoder_channels", "encoder_stride", "num_swin_blocks", "window_size", "num_heads", "head_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.window_size > 1 and self.window_size % 2:
            raise ValueError("window_size must be even (shifted windows use window_size // 2)")
        if self.mask_net_layers < 1:
            raise ValueError("mask_net_layers must be >= 1")

    @property
    def in_channels(self) -> int:
        return 3 if self.mode is Mode.COLORIZE else self.image_channels

    @property
    def out_channels(self) -> int:
        return 2 if self.mode is Mode.COLORIZE else self.image_channels

    @property
    def alignment(self) -> int:
        """Input sides are padded to a multiple of this."""
        return self.encoder_stride * 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _act():
    return nn.GELU()  # smooth: keeps finite-difference checks meaningful


class Encoder(nn.Module):
    def __init__(self, cin, c, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, c, 3, 1, 1)
        self.conv2 = nn.Conv2d(c, c, 3, stride, 1)
        self.conv3 = nn.Conv2d(c, c, 3, 1, 1)
        self.act = _act()

    def forward(self, x):
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        return self.conv3(x)


class MaskNet(nn.Module):
    """Guided blending mask from current features and the warped hidden state."""

    def __init__(self, c, layers=3):
        super().__init__()
        self.layers = layers
        for i in range(layers):
            cin = 2 * c if i == 0 else c
            cout = 1 if i == layers - 1 else c
            self.add_module(f"conv{i + 1}", nn.Conv2d(cin, cout, 3, 1, 1))
        self.act = _act()

    def forward(self, current, warped_state):
        if current.shape != warped_state.shape:
            raise ValueError(f"mask inputs differ: {tuple(current.shape)} vs {tuple(warped_state.shape)}")
        x = torch.cat([current, warped_state], 1)
        for i in range(self.layers):
            x = getattr(self, f"conv{i + 1}")(x)
            if i < self.layers - 1:
                x = self.act(x)
        return torch.sigmoid(x)


def aggregate(current, warped_state, mask):
    """Convex per-pixel blend of current features (weight ``mask``) and the warped state."""
    if current.shape != warped_state.shape or mask.shape[-2:] != current.shape[-2:]:
        raise ValueError("aggregate inputs must share spatial dims")
    return current * mask + warped_state * (1 - mask)


class SpatialRestorer(nn.Module):
    """Strided downsample, shifted-window transformer blocks, learned x2 upsample, outer residual."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c, m = cfg.encoder_channels, cfg.window_size
        self.window_size = m
        self.num_blocks = cfg.num_swin_blocks
        self.down = nn.Conv2d(c, c, 3, 2, 1)
        for i in range(cfg.num_swin_blocks):
            shift = 0 if (i % 2 == 0 or m == 1) else m // 2
            self.add_module(f"block{i}", SwinBlock(c, m, cfg.num_heads, cfg.head_dim, shift, cfg.mlp_ratio))
        self.up = nn.Conv2d(c, 4 * c, 3, 1, 1)

    def blocks(self):
        return [getattr(self, f"block{i}") for i in range(self.num_blocks)]

    def restore(self, h):
        z = self.down(h)
        _, _, zh, zw = z.shape
        m = self.window_size
        ph, pw = (-zh) % m, (-zw) % m
        if ph or pw:
            z = F.pad(z, (0, pw, 0, ph), mode="reflect" if min(zh, zw) > max(ph, pw) else "replicate")
        z = z.permute(0, 2, 3, 1)
        for blk in self.blocks():
            z = blk(z)
        z = z.permute(0, 3, 1, 2)[:, :, :zh, :zw]
        up = F.pixel_shuffle(self.up(z), 2)
        return h + up[:, :, : h.shape[2], : h.shape[3]]

    def forward(self, h):
        return self.restore(h)


class Branch(SpatialRestorer):
    """One propagation direction: guided-mask fusion followed by spatial restoration."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.mask = MaskNet(cfg.encoder_channels, cfg.mask_net_layers)

    def forward(self, feat, warped_state):
        m = self.mask(feat, warped_state)
        return self.restore(aggregate(feat, warped_state, m)), m


class Decoder(nn.Module):
    def __init__(self, c, cout, stride):
        super().__init__()
        self.stride = stride
        self.conv1 = nn.Conv2d(2 * c, c, 3, 1, 1)
        self.up = nn.Conv2d(c, c * stride * stride, 3, 1, 1)
        self.conv_out = nn.Conv2d(c, cout, 3, 1, 1)
        self.act = _act()

    def forward(self, s_fwd, s_bwd):
        if s_fwd.shape != s_bwd.shape:
            raise ValueError("forward and backward states differ in shape")
        x = self.act(self.conv1(torch.cat([s_fwd, s_bwd], 1)))
        if self.stride > 1:
            x = self.act(F.pixel_shuffle(self.up(x), self.stride))
        else:
            x = self.act(self.up(x))
        return self.conv_out(x)


def _flow_to_features(flow: torch.Tensor, stride: int) -> torch.Tensor:
    if stride == 1:
        return flow
    return F.avg_pool2d(flow, stride) / stride


class RTN(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.encoder_channels
        self.encoder = Encoder(cfg.in_channels, c, cfg.encoder_stride)
        self.fwd = Branch(cfg)
        self.bwd = Branch(cfg)
        self.decoder = Decoder(c, cfg.out_channels, cfg.encoder_stride)
        if cfg.mode is Mode.COLORIZE:
            from ..colorize import CorrespondenceEncoder

            self.corr = CorrespondenceEncoder(cfg.corr_channels)

    def encode(self, x):
        return self.encoder(x)

    def decode(self, s_fwd, s_bwd):
        return self.decoder(s_fwd, s_bwd)

    def _pad(self, frames):
        h, w = frames.shape[-2:]
        a = self.cfg.alignment
        ph, pw = (-h) % a, (-w) % a
        if not (ph or pw):
            return frames, (0, 0)
        n, t = frames.shape[:2]
        flat = frames.reshape(n * t, *frames.shape[2:])
        mode = "reflect" if min(h, w) > max(ph, pw) else "replicate"
        flat = F.pad(flat, (0, pw, 0, ph), mode=mode)
        return flat.view(n, t, *flat.shape[1:]), (ph, pw)

    @staticmethod
    def _pad_flow(flow, pad):
        if flow is None or not any(pad):
            return flow
        return F.pad(flow, (0, pad[1], 0, pad[0]), mode="replicate")

    def forward(self, frames, flows_prev=None, flows_next=None, flow_provider=None, return_masks=False):
        """Restore an (N, T, C, H, W) clip.

        ``flows_prev[t]`` warps frame t-1 onto t and ``flows_next[t]`` warps frame t+1 onto t,
        each (N, 2, H, W) or a FlowField; missing flows come from ``flow_provider`` on ``frames``.
        """
        n, t_len, _, h, w = frames.shape
        if flows_prev is None or flows_next is None:
            if flow_provider is None:
                raise ValueError("either flows or a flow provider is required")
            flows_prev, flows_next = clip_flows(frames, flow_provider)
        flows_prev = [f.flow if isinstance(f, FlowField) else f for f in flows_prev]
        flows_next = [f.flow if isinstance(f, FlowField) else f for f in flows_next]
        frames, pad = self._pad(frames)
        stride = self.cfg.encoder_stride

        feats = [self.encode(frames[:, t]) for t in range(t_len)]
        zeros = torch.zeros_like(feats[0])
        masks_f, masks_b = [None] * t_len, [None] * t_len

        fwd_states = []
        state = zeros
        for t in range(t_len):
            if t > 0:
                flow = _flow_to_features(self._pad_flow(flows_prev[t], pad), stride)
                state = warp(state, flow)
            state, masks_f[t] = self.fwd(feats[t], state)
            fwd_states.append(state)

        outputs = [None] * t_len
        state = zeros
        for t in reversed(range(t_len)):
            if t < t_len - 1:
                flow = _flow_to_features(self._pad_flow(flows_next[t], pad), stride)
                state = warp(state, flow)
            state, masks_b[t] = self.bwd(feats[t], state)
            outputs[t] = self.decode(fwd_states[t], state)[:, :, :h, :w]
            fwd_states[t] = None  # consumed
        out = torch.stack(outputs, 1)
        if return_masks:
            return out, torch.stack(masks_f, 1), torch.stack(masks_b, 1)
        return out

    def swapped(self) -> "RTN":
        """Copy with forward/backward branches exchanged and the decoder's concat order flipped."""
        other = copy.deepcopy(self)
        other.fwd, other.bwd = other.bwd, other.fwd
        c = self.cfg.encoder_channels
        with torch.no_grad():
            wgt = other.decoder.conv1.weight
            wgt.copy_(torch.cat([wgt[:, c:], wgt[:, :c]], 1))
        return other


def clip_flows(frames: torch.Tensor, provider):
    """Per-step flows for an (N, T, C, H, W) batch, as lists of (N, 2, H, W) tensors."""
    prev, nxt = [], []
    per_item = [pair_flows(frames[i], provider) for i in range(frames.shape[0])]
    t_len = frames.shape[1]
    for t in range(t_len):
        p = [item[0][t] for item in per_item]
        q = [item[1][t] for item in per_item]
        prev.append(None if p[0] is None else torch.cat([f.flow for f in p]).to(frames.dtype))
        nxt.append(None if q[0] is None else torch.cat([f.flow for f in q]).to(frames.dtype))
    return prev, nxt
