"""Contaminant texture library, procedural templates, and per-frame template placement."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass
class ContaminantTemplate:
    """Grayscale contaminant texture; 0 is clean film, 1 is full-strength contaminant."""

    texture: np.ndarray
    id: str

    def __post_init__(self):
        self.texture = np.asarray(self.texture, dtype=np.float64)
        if self.texture.ndim != 2:
            raise ValueError(f"template {self.id!r} must be 2-D")
        if min(self.texture.shape) < 32:
            raise ValueError(f"template {self.id!r} is smaller than 32x32")
        if self.texture.min() < 0 or self.texture.max() > 1:
            raise ValueError(f"template {self.id!r} has values outside [0, 1]")


def load_template_library(directory) -> dict[str, ContaminantTemplate]:
    """Every PNG in ``directory`` as a template keyed by file stem."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"template directory not found: {directory}")
    lib = {}
    for p in sorted(directory.glob("*.png")):
        with Image.open(p) as im:
            if im.mode.startswith("I;16") or im.mode == "I":
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        lib[p.stem] = ContaminantTemplate(arr, p.stem)
    if not lib:
        raise ValueError(f"no PNG templates in {directory}")
    return lib


def save_template_library(library: dict[str, ContaminantTemplate], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for tid, tpl in library.items():
        Image.fromarray(np.round(tpl.texture * 255).astype(np.uint8)).save(directory / f"{tid}.png")


def _scratches(rng, size):
    img = np.zeros((size, size))
    for _ in range(rng.integers(1, 4)):
        x0 = rng.uniform(0, size)
        slope = rng.normal(0, 0.05)
        width = rng.uniform(0.6, 1.8)
        amp = rng.uniform(0.6, 1.0)
        ys = np.arange(size)
        xs = x0 + slope * ys + np.cumsum(rng.normal(0, 0.15, size))
        xx = np.arange(size)[None, :]
        prof = np.exp(-0.5 * ((xx - xs[:, None]) / width) ** 2)
        img = np.maximum(img, amp * prof)
    return img


def _dust(rng, size):
    img = np.zeros((size, size))
    yy, xx = np.mgrid[:size, :size]
    for _ in range(rng.integers(4, 16)):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(0.8, 3.5)
        amp = rng.uniform(0.5, 1.0)
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r**2)) ** 2)
        img = np.maximum(img, amp * blob)
    return img


def _hair(rng, size):
    img = np.zeros((size, size))
    for _ in range(rng.integers(1, 3)):
        n = size * 3
        angle = np.cumsum(rng.normal(0, 0.08, n)) + rng.uniform(0, 2 * math.pi)
        pts = np.cumsum(np.stack([np.sin(angle), np.cos(angle)], 1) * 0.5, 0) + rng.uniform(0, size, 2)
        pts = np.round(pts).astype(int)
        ok = (pts >= 0).all(1) & (pts < size).all(1)
        img[pts[ok, 0], pts[ok, 1]] = 1.0
    return ndimage.gaussian_filter(img, 0.6) * 2.5


def synthetic_templates(n: int = 12, size: int = 96, seed: int = 0) -> dict[str, ContaminantTemplate]:
    """Procedural scratch, dust and hair textures for when no scanned library is available."""
    rng = np.random.default_rng(seed)
    makers = (("scratch", _scratches), ("dust", _dust), ("hair", _hair))
    lib = {}
    for i in range(n):
        name, fn = makers[i % len(makers)]
        tid = f"{name}_{i:03d}"
        lib[tid] = ContaminantTemplate(np.clip(fn(rng, size), 0.0, 1.0), tid)
    return lib


@dataclass
class Placement:
    """How one template is laid over the frame.

    ``crop`` is the template-space window (y0, x0, height, width) stretched over the frame,
    ``rotation`` is in radians about the frame centre, ``gamma`` is the contrast change and
    ``morph`` one of ``none``/``dilate``/``erode`` with a 3x3 element.
    """

    rotation: float
    crop: tuple[float, float, float, float]
    gamma: float = 1.0
    morph: str = "none"

    def to_dict(self):
        return {"rotation": self.rotation, "crop": list(self.crop), "gamma": self.gamma, "morph": self.morph}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["rotation"]), tuple(float(v) for v in d["crop"]), float(d["gamma"]), str(d["morph"]))


def sample_placement(rng: np.random.Generator, template: ContaminantTemplate) -> Placement:
    th, tw = template.texture.shape
    frac = rng.uniform(0.5, 1.0)
    ch, cw = frac * th, frac * tw
    y0 = rng.uniform(0, th - ch)
    x0 = rng.uniform(0, tw - cw)
    return Placement(
        rotation=float(rng.uniform(0, 2 * math.pi)),
        crop=(float(y0), float(x0), float(ch), float(cw)),
        gamma=float(rng.uniform(0.7, 1.4)),
        morph=str(rng.choice(["none", "dilate", "erode"])),
    )


def place_template(template: ContaminantTemplate, placement: Placement, shape, drift=(0.0, 0.0)) -> np.ndarray:
    """Render ``template`` onto an H x W grid, translated by ``drift`` = (dy, dx) pixels."""
    h, w = shape
    y0, x0, ch, cw = placement.crop
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    u = (yy - drift[0]) / h - 0.5
    v = (xx - drift[1]) / w - 0.5
    c, s = math.cos(placement.rotation), math.sin(placement.rotation)
    ur = c * u - s * v + 0.5
    vr = s * u + c * v + 0.5
    coords = np.stack([y0 + ur * ch, x0 + vr * cw])
    placed = ndimage.map_coordinates(template.texture, coords, order=1, mode="mirror")
    if placement.morph == "dilate":
        placed = ndimage.grey_dilation(placed, size=(3, 3))
    elif placement.morph == "erode":
        placed = ndimage.grey_erosion(placed, size=(3, 3))
    return np.clip(placed, 0.0, 1.0) ** placement.gamma
