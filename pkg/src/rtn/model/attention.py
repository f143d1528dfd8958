"""Shifted-window multi-head self-attention with a relative position bias."""

from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F


def window_partition(x: torch.Tensor, m: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nW, m*m, C)."""
    b, h, w, c = x.shape
    x = x.view(b, h // m, m, w // m, m, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, m * m, c)


def window_reverse(windows: torch.Tensor, m: int, h: int, w: int) -> torch.Tensor:
    """(B * nW, m*m, C) -> (B, H, W, C)."""
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // m) * (w // m))
    x = windows.view(b, h // m, w // m, m, m, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


def relative_position_index(m: int) -> torch.Tensor:
    """(m*m, m*m) index into the (2m-1)^2 bias table."""
    coords = torch.stack(torch.meshgrid(torch.arange(m), torch.arange(m), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (m - 1)
    return rel[..., 0] * (2 * m - 1) + rel[..., 1]


def region_labels(h: int, w: int, m: int, shift: int) -> torch.Tensor:
    """Per-pixel region id of the cyclically shifted map; tokens attend only within a region."""
    labels = torch.zeros(h, w, dtype=torch.long)
    if shift == 0:
        return labels
    slices = (slice(0, -m), slice(-m, -shift), slice(-shift, None))
    cnt = 0
    for hs in slices:
        for ws in slices:
            labels[hs, ws] = cnt
            cnt += 1
    return labels


def shift_attention_mask(h: int, w: int, m: int, shift: int) -> torch.Tensor | None:
    """(nW, m*m, m*m) additive mask, -inf-like between tokens of different shifted regions."""
    if shift == 0:
        return None
    lab = window_partition(region_labels(h, w, m, shift)[None, :, :, None].float(), m).squeeze(-1)
    diff = lab[:, :, None] - lab[:, None, :]
    return torch.zeros_like(diff).masked_fill(diff != 0, -100.0)


class WindowAttention(nn.Module):
    def __init__(self, dim: int, window_size: int, num_heads: int, head_dim: int):
        super().__init__()
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.head_dim = head_dim
        inner = num_heads * head_dim
        self.qkv = nn.Linear(dim, 3 * inner)
        self.proj = nn.Linear(inner, dim)
        self.bias_table = nn.Parameter(torch.zeros((2 * window_size - 1) ** 2, num_heads))
        nn.init.trunc_normal_(self.bias_table, std=0.02)
        self.register_buffer("rel_index", relative_position_index(window_size), persistent=False)

    def position_bias(self) -> torch.Tensor:
        n = self.window_size**2
        return self.bias_table[self.rel_index.view(-1)].view(n, n, -1).permute(2, 0, 1)

    def attention_weights(self, q, k, mask=None):
        """Softmax(QK^T / sqrt(d) + B [+ mask]) for (B_, heads, N, d) queries and keys."""
        attn = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        attn = attn + self.position_bias().unsqueeze(0).to(attn.dtype)
        if mask is not None:
            nw = mask.shape[0]
            b_ = attn.shape[0]
            attn = attn.view(b_ // nw, nw, self.num_heads, *attn.shape[-2:]) + mask[None, :, None].to(attn.dtype)
            attn = attn.view(b_, self.num_heads, *attn.shape[-2:])
        return attn.softmax(-1)

    def forward(self, windows: torch.Tensor, mask=None, return_weights: bool = False):
        b_, n, _ = windows.shape
        qkv = self.qkv(windows).view(b_, n, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        weights = self.attention_weights(q, k, mask)
        out = (weights @ v).transpose(1, 2).reshape(b_, n, -1)
        out = self.proj(out)
        return (out, weights) if return_weights else out


def window_attention(z: torch.Tensor, attn: WindowAttention, shift: int = 0, return_weights: bool = False):
    """Windowed attention over a (B, h, w, C) map whose h, w are multiples of the window size."""
    b, h, w, c = z.shape
    m = attn.window_size
    if h % m or w % m:
        raise ValueError(f"map {h}x{w} is not a multiple of window size {m}")
    if shift not in (0, m // 2):
        raise ValueError(f"shift must be 0 or {m // 2}, got {shift}")
    if shift:
        z = torch.roll(z, shifts=(-shift, -shift), dims=(1, 2))
    mask = shift_attention_mask(h, w, m, shift)
    if mask is not None:
        mask = mask.to(z.device)
    out = attn(window_partition(z, m), mask, return_weights)
    weights = None
    if return_weights:
        out, weights = out
    out = window_reverse(out, m, h, w)
    if shift:
        out = torch.roll(out, shifts=(shift, shift), dims=(1, 2))
    return (out, weights) if return_weights else out


class SwinBlock(nn.Module):
    def __init__(self, dim, window_size, num_heads, head_dim, shift, mlp_ratio=2.0):
        super().__init__()
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads, head_dim)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + window_attention(self.norm1(x), self.attn, self.shift)
        return x + self.mlp(self.norm2(x))
