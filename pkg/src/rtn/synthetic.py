"""Procedural clean clips with known global motion, for tests, demos and overfit runs."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .videodata import ColorSpace, FrameSequence


def _canvas(rng, h, w, channels):
    img = np.zeros((h, w, channels))
    for sigma, amp in ((12.0, 0.6), (4.0, 0.25), (1.5, 0.1)):
        field = ndimage.gaussian_filter(rng.normal(size=(h, w, channels)), sigma, axes=(0, 1))
        field /= field.std() + 1e-12
        img += amp * field
    img = 0.5 + 0.12 * img
    yy, xx = np.mgrid[:h, :w]
    for _ in range(max(4, (h * w) // 600)):
        color = rng.uniform(0.05, 0.95, channels)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if rng.uniform() < 0.5:
            r = rng.uniform(3, 10)
            sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
        else:
            hh, ww = rng.uniform(3, 12, 2)
            sel = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= ww)
        img[sel] = 0.3 * img[sel] + 0.7 * color
    return np.clip(img, 0.0, 1.0)


def synthetic_clip(num_frames: int = 8, height: int = 64, width: int = 64, seed: int = 0,
                   motion: tuple[int, int] = (0, 1), channels: int = 3) -> FrameSequence:
    """A textured scene panning by integer ``motion`` = (dy, dx) pixels per frame."""
    rng = np.random.default_rng(seed)
    dy, dx = motion
    ch = height + abs(dy) * (num_frames - 1)
    cw = width + abs(dx) * (num_frames - 1)
    canvas = _canvas(rng, ch, cw, channels)
    frames = []
    for t in range(num_frames):
        y0 = dy * t if dy >= 0 else abs(dy) * (num_frames - 1 - t)
        x0 = dx * t if dx >= 0 else abs(dx) * (num_frames - 1 - t)
        frames.append(canvas[y0 : y0 + height, x0 : x0 + width])
    space = ColorSpace.GRAY if channels == 1 else ColorSpace.RGB
    return FrameSequence(np.stack(frames), space)
