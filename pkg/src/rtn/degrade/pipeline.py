"""Temporally coherent rendering of a degradation recipe over a clip."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..videodata import ColorSpace, FrameError, FrameSequence
from . import ops
from .recipe import PERTURBED_FIELDS, DegradationRecipe, RecipeError, clamp_interval
from .templates import ContaminantTemplate, place_template

STAGE_ORDER = ("blend", "blur", "resample", "noise", "jpeg", "jitter")
DRIFT_STEP = 2.0
DEFECT_THRESHOLD = 1.0 / 255.0


@dataclass
class DefectMaskSequence:
    masks: np.ndarray  # T x H x W bool

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)


@dataclass
class FrameParams:
    """Fully resolved parameters for one frame; enough to re-render it exactly."""

    index: int
    opacities: list[float]
    drifts: list[tuple[float, float]]
    noise_sigma: float
    sigma1: float
    sigma2: float
    theta: float
    resample_scale: float
    jpeg_quality: int
    brightness: float
    contrast: float
    noise_seed: list[int] = field(default_factory=list)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _jitter(rng, recipe: DegradationRecipe, name: str, base: float) -> float:
    eps = rng.normal(0.0, 1.0) * recipe.jitter_scale(name)
    lo, hi = clamp_interval(name, base)
    return float(min(hi, max(lo, base * (1.0 + eps))))


def draw_frame_params(recipe: DegradationRecipe, num_frames: int) -> list[FrameParams]:
    """Per-frame parameter stream. Sequential by construction: drifts are a random walk."""
    rng = np.random.default_rng([recipe.seed, 0])
    base = recipe.base_values()
    drifts = [np.zeros(2) for _ in recipe.template_ids]
    out = []
    for t in range(num_frames):
        if t > 0:
            drifts = [d + rng.normal(0.0, DRIFT_STEP, 2) for d in drifts]
        # fixed draw order keeps the stream stable regardless of which jitters are zero
        values = {name: _jitter(rng, recipe, name, base[name]) for name in PERTURBED_FIELDS if name != "opacity"}
        opac = [_jitter(rng, recipe, "opacity", o) for o in recipe.opacities]
        out.append(
            FrameParams(
                index=t,
                opacities=opac,
                drifts=[(float(d[0]), float(d[1])) for d in drifts],
                noise_sigma=values["noise_sigma"],
                sigma1=values["sigma1"],
                sigma2=values["sigma2"],
                theta=values["theta"],
                resample_scale=values["resample_scale"],
                jpeg_quality=int(round(values["jpeg_quality"])),
                brightness=values["brightness"],
                contrast=values["contrast"],
                noise_seed=[int(recipe.seed), 1, t],
            )
        )
    return out


def resolve_templates(recipe: DegradationRecipe, library) -> list[ContaminantTemplate]:
    library = library or {}
    missing = [tid for tid in recipe.template_ids if tid not in library]
    if missing:
        raise RecipeError(f"template id(s) not found in library: {', '.join(missing)}")
    return [library[tid] for tid in recipe.template_ids]


def render_frame(frame: np.ndarray, params: FrameParams, recipe: DegradationRecipe, templates) -> tuple[np.ndarray, np.ndarray]:
    """Apply every stage to one H x W x C frame. Returns (degraded, defect_mask)."""
    x = np.asarray(frame, dtype=np.float64)
    h, w = x.shape[:2]
    pre = x
    for tpl, mode, opacity, placement, drift in zip(
        templates, recipe.blend_modes, params.opacities, recipe.placements, params.drifts
    ):
        placed = place_template(tpl, placement, (h, w), drift)
        if mode is ops.BlendMode.MULTIPLY:
            # template texture is contaminant strength, multiply darkens where it is high
            placed = 1.0 - placed
        x = ops.blend_contaminant(x, placed, mode, opacity)
    mask = (np.abs(x - pre) > DEFECT_THRESHOLD).any(-1)

    radius = max(recipe.blur.kernel_radius, math.ceil(3 * max(params.sigma1, params.sigma2)))
    x = ops.gaussian_blur(x, ops.BlurParams(params.sigma1, params.sigma2, params.theta, radius))
    x = ops.resample_roundtrip(x, params.resample_scale, recipe.resample_method_down, recipe.resample_method_up)
    x = ops.apply_noise(x, recipe.noise_kind, params.noise_sigma, np.random.default_rng(params.noise_seed))
    x = ops.jpeg_roundtrip(x, params.jpeg_quality)
    x = ops.color_jitter(x, params.brightness, params.contrast)
    return x, mask


def degrade_sequence(clean: FrameSequence, recipe: DegradationRecipe, library=None, return_log: bool = False):
    """Render ``recipe`` over ``clean``. Returns ``(degraded, masks)`` and, optionally, the frame log."""
    if clean.color_space not in (ColorSpace.RGB, ColorSpace.GRAY):
        raise FrameError("degrade_sequence expects an RGB or GRAY sequence")
    templates = resolve_templates(recipe, library)
    params = draw_frame_params(recipe, len(clean))
    frames, masks = [], []
    for frame, p in zip(clean.frames, params):
        out, mask = render_frame(frame, p, recipe, templates)
        frames.append(out)
        masks.append(mask)
    degraded = FrameSequence(np.stack(frames), clean.color_space, clean.fps)
    result = (degraded, DefectMaskSequence(np.stack(masks)))
    if return_log:
        log = {"stages": list(STAGE_ORDER), "codec": ops.jpeg_codec(), "frames": [p.to_dict() for p in params]}
        return result + (log,)
    return result


def rerender(clean: FrameSequence, recipe: DegradationRecipe, frame_log: list[dict], library=None):
    """Re-render from logged per-frame parameters instead of the recipe's random stream."""
    templates = resolve_templates(recipe, library)
    frames, masks = [], []
    for frame, d in zip(clean.frames, frame_log):
        d = dict(d)
        d["drifts"] = [tuple(v) for v in d["drifts"]]
        out, mask = render_frame(frame, FrameParams(**d), recipe, templates)
        frames.append(out)
        masks.append(mask)
    return FrameSequence(np.stack(frames), clean.color_space, clean.fps), DefectMaskSequence(np.stack(masks))
