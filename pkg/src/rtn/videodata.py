"""Frame-sequence containers, PNG directory I/O and differentiable sRGB/CIELAB conversion."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

FRAME_PATTERN = "frame_{:06d}.png"
_FRAME_RE = re.compile(r"^frame_(\d{6})\.png$")

# sRGB primaries, D65 white
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
D65_WHITE = (0.95047, 1.0, 1.08883)

_DELTA = 6.0 / 29.0

# model-boundary scaling of LAB channels
LAB_SCALE = (100.0, 128.0, 128.0)


class ColorSpace(str, enum.Enum):
    RGB = "RGB"
    GRAY = "GRAY"
    LAB = "LAB"


class FrameError(ValueError):
    """Raised for malformed frame directories or sequences."""


@dataclass
class FrameSequence:
    """A T x H x W x C clip. Values live in [0, 1] except in LAB space."""

    frames: np.ndarray
    color_space: ColorSpace = ColorSpace.RGB
    fps: Optional[float] = field(default=None)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.color_space = ColorSpace(self.color_space)
        if self.frames.ndim != 4:
            raise FrameError(f"expected T x H x W x C frames, got shape {self.frames.shape}")
        t, h, w, c = self.frames.shape
        if t < 1 or h < 8 or w < 8:
            raise FrameError(f"sequence too small: {self.frames.shape}")
        if c not in (1, 2, 3):
            raise FrameError(f"unsupported channel count {c}")
        if self.color_space is ColorSpace.GRAY and c != 1:
            raise FrameError("GRAY sequences carry one channel")
        if self.color_space in (ColorSpace.RGB, ColorSpace.LAB) and c != 3:
            raise FrameError(f"{self.color_space.value} sequences carry three channels")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape

    def reversed(self) -> "FrameSequence":
        return FrameSequence(self.frames[::-1].copy(), self.color_space, self.fps)

    def to_tensor(self, dtype=torch.float32) -> torch.Tensor:
        """Return a (T, C, H, W) tensor."""
        return torch.from_numpy(np.ascontiguousarray(self.frames.transpose(0, 3, 1, 2))).to(dtype)

    @classmethod
    def from_tensor(cls, x: torch.Tensor, color_space=ColorSpace.RGB, fps=None) -> "FrameSequence":
        arr = x.detach().cpu().numpy().transpose(0, 2, 3, 1)
        return cls(arr, color_space, fps)


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                return arr[..., None]
            if im.mode == "L":
                return np.asarray(im, dtype=np.float64)[..., None] / 255.0
            if im.mode != "RGB":
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise FrameError(f"unreadable frame {path.name}: {exc}") from exc


def list_frames(directory) -> list[Path]:
    """Frame files of `directory` in index order; raises on gaps or a missing first frame."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FrameError(f"not a directory: {directory}")
    indexed = {}
    for p in directory.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            indexed[int(m.group(1))] = p
    if not indexed:
        raise FrameError(f"no frames matching frame_%06d.png in {directory}")
    for i in range(1, max(indexed) + 1):
        if i not in indexed:
            raise FrameError(f"missing frame {FRAME_PATTERN.format(i)} in {directory}")
    return [indexed[i] for i in range(1, max(indexed) + 1)]


def load_sequence(directory) -> FrameSequence:
    paths = list_frames(directory)
    frames = []
    for p in paths:
        arr = _read_png(p)
        if frames and arr.shape != frames[0].shape:
            raise FrameError(
                f"dimension mismatch: {p.name} is {arr.shape}, expected {frames[0].shape}"
            )
        frames.append(arr)
    data = np.stack(frames)
    space = ColorSpace.GRAY if data.shape[-1] == 1 else ColorSpace.RGB
    return FrameSequence(data, space)


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_frame(frame: np.ndarray, path) -> None:
    data = to_uint8(frame)
    if data.ndim == 3 and data.shape[-1] == 1:
        data = data[..., 0]
    Image.fromarray(data).save(path)


def save_sequence(seq: FrameSequence, directory) -> None:
    if seq.color_space not in (ColorSpace.RGB, ColorSpace.GRAY):
        raise FrameError("only RGB or GRAY sequences can be written as PNG")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(seq.frames, start=1):
            save_frame(frame, directory / FRAME_PATTERN.format(i))
    except OSError as exc:
        raise FrameError(f"cannot write frames to {directory}: {exc}") from exc


# ---------------------------------------------------------------------------
# colour conversion; torch versions are differentiable and work on any float dtype


def _matmul_channels(x: torch.Tensor, m: np.ndarray, dim: int) -> torch.Tensor:
    mat = torch.as_tensor(m, dtype=x.dtype, device=x.device)
    x = x.movedim(dim, -1)
    return (x @ mat.T).movedim(-1, dim)


def srgb_to_linear(c: torch.Tensor) -> torch.Tensor:
    hi = ((c.clamp(min=0.04045) + 0.055) / 1.055) ** 2.4
    return torch.where(c <= 0.04045, c / 12.92, hi)


def linear_to_srgb(c: torch.Tensor) -> torch.Tensor:
    hi = 1.055 * c.clamp(min=0.0031308) ** (1.0 / 2.4) - 0.055
    return torch.where(c <= 0.0031308, 12.92 * c, hi)


def _lab_f(t: torch.Tensor) -> torch.Tensor:
    hi = t.clamp(min=_DELTA**3) ** (1.0 / 3.0)
    return torch.where(t > _DELTA**3, hi, t / (3 * _DELTA**2) + 4.0 / 29.0)


def _lab_finv(f: torch.Tensor) -> torch.Tensor:
    return torch.where(f > _DELTA, f**3, 3 * _DELTA**2 * (f - 4.0 / 29.0))


def rgb_to_lab_tensor(rgb: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """sRGB in [0,1] to CIELAB (L in [0,100]) along channel axis `dim`."""
    xyz = _matmul_channels(srgb_to_linear(rgb), _RGB_TO_XYZ, dim)
    white = torch.as_tensor(D65_WHITE, dtype=rgb.dtype, device=rgb.device)
    shape = [1] * xyz.ndim
    shape[dim] = 3
    f = _lab_f(xyz / white.view(shape))
    fx, fy, fz = f.unbind(dim)
    return torch.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], dim=dim)


def lab_to_rgb_tensor(lab: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """CIELAB to sRGB, clamped to [0,1]."""
    l, a, b = lab.unbind(dim)
    fy = (l + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xyz = torch.stack(
        [D65_WHITE[0] * _lab_finv(fx), D65_WHITE[1] * _lab_finv(fy), D65_WHITE[2] * _lab_finv(fz)],
        dim=dim,
    )
    linear = _matmul_channels(xyz, _XYZ_TO_RGB, dim)
    return linear_to_srgb(linear).clamp(0.0, 1.0)


def rgb_to_lab(seq: FrameSequence) -> FrameSequence:
    if seq.color_space is not ColorSpace.RGB:
        raise FrameError(f"rgb_to_lab expects an RGB sequence, got {seq.color_space.value}")
    lab = rgb_to_lab_tensor(torch.from_numpy(seq.frames.astype(np.float64)))
    return FrameSequence(lab.numpy(), ColorSpace.LAB, seq.fps)


def lab_to_rgb(seq: FrameSequence) -> FrameSequence:
    if seq.color_space is not ColorSpace.LAB:
        raise FrameError(f"lab_to_rgb expects a LAB sequence, got {seq.color_space.value}")
    rgb = lab_to_rgb_tensor(torch.from_numpy(seq.frames.astype(np.float64)))
    return FrameSequence(rgb.numpy(), ColorSpace.RGB, seq.fps)


def scale_lab(lab: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Standard LAB units to the O(1) units used at the network boundary."""
    shape = [1] * lab.ndim
    shape[dim] = 3
    return lab / torch.as_tensor(LAB_SCALE, dtype=lab.dtype, device=lab.device).view(shape)


def unscale_lab(lab: torch.Tensor, dim: int = -1) -> torch.Tensor:
    shape = [1] * lab.ndim
    shape[dim] = 3
    return lab * torch.as_tensor(LAB_SCALE, dtype=lab.dtype, device=lab.device).view(shape)


def to_gray(frames: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of (..., C) frames; single-channel input is returned as is."""
    if frames.shape[-1] == 1:
        return frames[..., 0]
    return frames[..., :3] @ np.array([0.299, 0.587, 0.114], dtype=frames.dtype)
