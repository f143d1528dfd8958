"""Per-video degradation recipes: sampling, validation and JSON serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .ops import BlendMode, BlurParams, Interp, NoiseKind
from .templates import ContaminantTemplate, Placement, sample_placement

SCHEMA_VERSION = 1

# ranges recipes are sampled from
SAMPLE_RANGES = {
    "opacity": (0.6, 1.0),
    "noise_sigma": (5.0, 50.0),
    "sigma1": (0.0, 1.0),
    "sigma2": (0.0, 1.0),
    "theta": (0.0, math.pi),
    "resample_scale": (0.5, 1.0),
    "jpeg_quality": (40, 100),
    "brightness": (0.8, 1.2),
    "contrast": (0.9, 1.0),
}

# ranges the individual stages accept
LEGAL_RANGES = {
    "opacity": (0.0, 1.0),
    "noise_sigma": (0.0, 100.0),
    "sigma1": (1e-3, 1.0),
    "sigma2": (1e-3, 1.0),
    "theta": (0.0, math.pi),
    "resample_scale": (0.1, 1.0),
    "jpeg_quality": (1, 100),
    "brightness": (0.5, 1.5),
    "contrast": (0.5, 1.5),
}

PERTURBED_FIELDS = tuple(SAMPLE_RANGES)


class RecipeError(ValueError):
    pass


@dataclass
class DegradationRecipe:
    template_ids: list[str] = field(default_factory=list)
    blend_modes: list[BlendMode] = field(default_factory=list)
    opacities: list[float] = field(default_factory=list)
    placements: list[Placement] = field(default_factory=list)
    noise_kind: NoiseKind = NoiseKind.GAUSSIAN
    noise_sigma: float = 0.0
    blur: BlurParams = field(default_factory=lambda: BlurParams(1e-3, 1e-3, 0.0, 3))
    resample_scale: float = 1.0
    resample_method_down: Interp = Interp.BILINEAR
    resample_method_up: Interp = Interp.BILINEAR
    jpeg_quality: int = 100
    brightness: float = 1.0
    contrast: float = 1.0
    perturb_sigma: Union[float, dict] = 0.0
    seed: int = 0

    def __post_init__(self):
        self.blend_modes = [BlendMode(m) for m in self.blend_modes]
        self.noise_kind = NoiseKind(self.noise_kind)
        self.resample_method_down = Interp(self.resample_method_down)
        self.resample_method_up = Interp(self.resample_method_up)
        self.jpeg_quality = int(self.jpeg_quality)
        self.validate()

    def base_values(self) -> dict:
        return {
            "noise_sigma": self.noise_sigma,
            "sigma1": self.blur.sigma1,
            "sigma2": self.blur.sigma2,
            "theta": self.blur.theta,
            "resample_scale": self.resample_scale,
            "jpeg_quality": self.jpeg_quality,
            "brightness": self.brightness,
            "contrast": self.contrast,
        }

    def jitter_scale(self, name: str) -> float:
        if isinstance(self.perturb_sigma, dict):
            return float(self.perturb_sigma.get(name, 0.0))
        return float(self.perturb_sigma)

    def validate(self):
        n = len(self.template_ids)
        if not (len(self.blend_modes) == len(self.opacities) == len(self.placements) == n):
            raise RecipeError("template_ids, blend_modes, opacities and placements must have equal length")
        for name, value in list(self.base_values().items()) + [("opacity", o) for o in self.opacities]:
            lo, hi = LEGAL_RANGES[name]
            if not lo <= value <= hi:
                raise RecipeError(f"{name}={value} outside [{lo}, {hi}]")
        jitters = self.perturb_sigma.values() if isinstance(self.perturb_sigma, dict) else [self.perturb_sigma]
        if any(j < 0 for j in jitters):
            raise RecipeError("perturb_sigma must be non-negative")
        if self.blur.kernel_radius < 1:
            raise RecipeError("blur kernel_radius must be >= 1")
        if self.seed < 0:
            raise RecipeError("seed must be unsigned")

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "template_ids": list(self.template_ids),
            "blend_modes": [m.value for m in self.blend_modes],
            "opacities": [float(o) for o in self.opacities],
            "placements": [p.to_dict() for p in self.placements],
            "noise_kind": self.noise_kind.value,
            "noise_sigma": float(self.noise_sigma),
            "blur": {
                "sigma1": float(self.blur.sigma1),
                "sigma2": float(self.blur.sigma2),
                "theta": float(self.blur.theta),
                "kernel_radius": int(self.blur.kernel_radius),
            },
            "resample_scale": float(self.resample_scale),
            "resample_method_down": self.resample_method_down.value,
            "resample_method_up": self.resample_method_up.value,
            "jpeg_quality": int(self.jpeg_quality),
            "brightness": float(self.brightness),
            "contrast": float(self.contrast),
            "perturb_sigma": self.perturb_sigma,
            "seed": int(self.seed),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationRecipe":
        d = dict(d)
        schema = d.pop("schema", None)
        if schema != SCHEMA_VERSION:
            raise RecipeError(f"unsupported recipe schema {schema!r}")
        d.pop("codec", None)
        try:
            d["placements"] = [Placement.from_dict(p) for p in d["placements"]]
            d["blur"] = BlurParams(**d["blur"])
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise RecipeError(f"malformed recipe: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "DegradationRecipe":
        return cls.from_dict(json.loads(text))


def identity_recipe(seed: int = 0) -> DegradationRecipe:
    """A recipe whose every stage is (near-)identity; JPEG at quality 100 is the only loss."""
    return DegradationRecipe(seed=seed)


def _uniform_open_low(rng, lo, hi):
    # (lo, hi]
    return float(hi - rng.uniform(0.0, 1.0) * (hi - lo))


def sample_recipe(library: dict[str, ContaminantTemplate], seed: int, perturb_sigma: float = 0.05) -> DegradationRecipe:
    if not library:
        raise RecipeError("template library is empty")
    rng = np.random.default_rng(seed)
    ids = sorted(library)
    count = int(rng.integers(1, 5))
    chosen = [ids[i] for i in rng.integers(0, len(ids), count)]
    modes = [BlendMode(m) for m in rng.choice([m.value for m in BlendMode], count)]
    opacities = [float(rng.uniform(*SAMPLE_RANGES["opacity"])) for _ in range(count)]
    placements = [sample_placement(rng, library[t]) for t in chosen]
    sigma1 = _uniform_open_low(rng, *SAMPLE_RANGES["sigma1"])
    sigma2 = _uniform_open_low(rng, *SAMPLE_RANGES["sigma2"])
    blur = BlurParams(
        sigma1=max(sigma1, LEGAL_RANGES["sigma1"][0]),
        sigma2=max(sigma2, LEGAL_RANGES["sigma2"][0]),
        theta=float(rng.uniform(*SAMPLE_RANGES["theta"])),
        kernel_radius=int(math.ceil(3 * max(sigma1, sigma2))) or 1,
    )
    interps = [m.value for m in Interp]
    return DegradationRecipe(
        template_ids=chosen,
        blend_modes=modes,
        opacities=opacities,
        placements=placements,
        noise_kind=NoiseKind(rng.choice([k.value for k in NoiseKind])),
        noise_sigma=float(rng.uniform(*SAMPLE_RANGES["noise_sigma"])),
        blur=blur,
        resample_scale=float(rng.uniform(*SAMPLE_RANGES["resample_scale"])),
        resample_method_down=Interp(rng.choice(interps)),
        resample_method_up=Interp(rng.choice(interps)),
        jpeg_quality=int(rng.integers(SAMPLE_RANGES["jpeg_quality"][0], SAMPLE_RANGES["jpeg_quality"][1] + 1)),
        brightness=float(rng.uniform(*SAMPLE_RANGES["brightness"])),
        contrast=float(rng.uniform(*SAMPLE_RANGES["contrast"])),
        perturb_sigma=perturb_sigma,
        seed=int(rng.integers(0, 2**32)),
    )


def clamp_interval(name: str, base: float) -> tuple[float, float]:
    """Per-frame clamp range: the sampling range widened to include ``base``, within the legal range."""
    slo, shi = SAMPLE_RANGES[name]
    llo, lhi = LEGAL_RANGES[name]
    return max(llo, min(slo, base)), min(lhi, max(shi, base))
