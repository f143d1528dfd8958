"""Single-frame degradation stages. Frames are H x W x C float arrays in [0, 1]."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, features
from scipy import ndimage


class BlendMode(str, enum.Enum):
    ADD = "ADD"
    SUBTRACT = "SUBTRACT"
    MULTIPLY = "MULTIPLY"


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "GAUSSIAN"
    SPECKLE = "SPECKLE"


class Interp(str, enum.Enum):
    NEAREST = "NEAREST"
    BILINEAR = "BILINEAR"
    BICUBIC = "BICUBIC"


def _as_hwc(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    return frame[..., None] if frame.ndim == 2 else frame


def blend_contaminant(frame, template, mode, opacity: float) -> np.ndarray:
    frame = _as_hwc(frame)
    t = np.asarray(template, dtype=np.float64)
    if t.ndim == 3:
        t = t[..., 0]
    if t.shape != frame.shape[:2]:
        raise ValueError(f"placed template {t.shape} does not match frame {frame.shape[:2]}")
    t = t[..., None]
    mode = BlendMode(mode)
    if mode is BlendMode.ADD:
        out = frame + opacity * t
    elif mode is BlendMode.SUBTRACT:
        out = frame - opacity * t
    else:
        out = frame * (1.0 - opacity * (1.0 - t))
    return np.clip(out, 0.0, 1.0)


def apply_noise(frame, kind, sigma: float, rng: np.random.Generator) -> np.ndarray:
    frame = _as_hwc(frame)
    if sigma == 0:
        return frame.copy()
    n = rng.normal(0.0, sigma / 255.0, size=frame.shape)
    if NoiseKind(kind) is NoiseKind.GAUSSIAN:
        out = frame + n
    else:
        out = frame * (1.0 + n)
    return np.clip(out, 0.0, 1.0)


@dataclass
class BlurParams:
    sigma1: float
    sigma2: float
    theta: float
    kernel_radius: int = 3

    def covariance(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        return rot @ np.diag([self.sigma1**2, self.sigma2**2]) @ rot.T


def blur_kernel(params: BlurParams) -> np.ndarray:
    """Sampled anisotropic Gaussian on [-r, r]^2, rows indexed by dy, columns by dx."""
    cov = params.covariance()
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise ValueError("blur covariance is not positive definite")
    inv = np.linalg.inv(cov)
    r = int(params.kernel_radius)
    if r < 1:
        raise ValueError("kernel_radius must be >= 1")
    ax = np.arange(-r, r + 1, dtype=np.float64)
    dy, dx = np.meshgrid(ax, ax, indexing="ij")
    p = np.stack([dx, dy], -1)
    q = np.einsum("...i,ij,...j->...", p, inv, p)
    k = np.exp(-0.5 * q)
    return k / k.sum()


def gaussian_blur(frame, params: BlurParams) -> np.ndarray:
    frame = _as_hwc(frame)
    k = blur_kernel(params)
    out = np.empty_like(frame)
    for c in range(frame.shape[-1]):
        out[..., c] = ndimage.correlate(frame[..., c], k, mode="reflect")
    return np.clip(out, 0.0, 1.0)


_TORCH_MODES = {Interp.NEAREST: "nearest", Interp.BILINEAR: "bilinear", Interp.BICUBIC: "bicubic"}


def _resize(x: torch.Tensor, size, method: Interp) -> torch.Tensor:
    mode = _TORCH_MODES[Interp(method)]
    if mode == "nearest":
        return F.interpolate(x, size=size, mode=mode)
    return F.interpolate(x, size=size, mode=mode, align_corners=False)


def resample_roundtrip(frame, scale: float, method_down, method_up) -> np.ndarray:
    frame = _as_hwc(frame)
    h, w = frame.shape[:2]
    if not 0 < scale <= 1:
        raise ValueError(f"scale must lie in (0, 1], got {scale}")
    dh, dw = int(math.floor(scale * h)), int(math.floor(scale * w))
    if dh < 4 or dw < 4:
        raise ValueError(f"downsampled size {dh}x{dw} is below 4 pixels")
    if dh == h and dw == w:
        return frame.copy()
    x = torch.from_numpy(np.ascontiguousarray(frame.transpose(2, 0, 1)))[None]
    x = _resize(_resize(x, (dh, dw), method_down), (h, w), method_up)
    return np.clip(x[0].numpy().transpose(1, 2, 0), 0.0, 1.0)


def jpeg_codec() -> str:
    """Name and version of the JPEG codec used by :func:`jpeg_roundtrip`."""
    return f"Pillow {Image.__version__} / libjpeg {features.version('jpg')} (RGB, 4:4:4)"


def jpeg_roundtrip(frame, quality: int) -> np.ndarray:
    frame = _as_hwc(frame)
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must lie in [1, 100], got {quality}")
    data = np.round(np.clip(frame, 0, 1) * 255.0).astype(np.uint8)
    im = Image.fromarray(data[..., 0] if data.shape[-1] == 1 else data)
    buf = io.BytesIO()
    # RGB-domain, 4:4:4: keeps quality 100 within a level of the input (no YCbCr rounding)
    im.save(buf, format="JPEG", quality=quality, subsampling=0, keep_rgb=True)
    buf.seek(0)
    with Image.open(buf) as dec:
        out = np.asarray(dec, dtype=np.float64) / 255.0
    return out[..., None] if out.ndim == 2 else out


def color_jitter(frame, brightness: float, contrast: float) -> np.ndarray:
    frame = _as_hwc(frame)
    mean = frame.mean()
    out = np.clip(contrast * (frame - mean) + mean, 0.0, 1.0)
    return np.clip(brightness * out, 0.0, 1.0)
