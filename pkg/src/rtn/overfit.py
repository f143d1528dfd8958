"""Single-clip overfit runs used as end-to-end checks of the restoration and colorization paths."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .degrade import DegradationRecipe, degrade_sequence, sample_recipe, synthetic_templates
from .flow import BuiltinFlow
from .metrics import psnr, warping_error
from .model.network import Mode, ModelConfig
from .synthetic import synthetic_clip
from .train import Batch, FixedSource, TrainConfig, Trainer, colorize_batch, fit
from .videodata import FrameSequence

log = logging.getLogger(__name__)


def moderate_recipe(seed: int = 0, library=None) -> DegradationRecipe:
    """A sampled recipe pinned to mid-range photometric settings, keeping sampled contaminants."""
    library = library or synthetic_templates(seed=seed)
    r = sample_recipe(library, seed, perturb_sigma=0.05)
    r.noise_sigma = 15.0
    r.jpeg_quality = 75
    r.resample_scale = 0.75
    r.brightness = 1.0
    r.contrast = 0.95
    r.validate()
    return r


@dataclass
class RestoreOverfitResult:
    psnr_degraded: float
    psnr_restored: float
    ewarp_degraded: float
    ewarp_restored: float
    ewarp_clean: float
    mask_inside: float
    mask_outside: float
    steps: int
    seconds: float
    records: list = field(default_factory=list, repr=False)


def mask_separation(masks_f: torch.Tensor, masks_b: torch.Tensor, defects: np.ndarray) -> tuple[float, float]:
    """Mean guided-mask value inside / outside ground-truth defect pixels.

    Masks are (1, T, 1, h, w) at feature resolution and are upsampled to the frame grid. Steps whose
    warped state is the zero initial state (first forward, last backward) carry no temporal prior and
    are skipped.
    """
    t_len, h, w = defects.shape
    ins, outs = [], []
    for branch, skip in ((masks_f, 0), (masks_b, t_len - 1)):
        for t in range(t_len):
            if t == skip:
                continue
            m = F.interpolate(branch[:, t].float(), size=(h, w), mode="nearest")[0, 0].numpy()
            d = defects[t]
            if d.any():
                ins.append(m[d])
            if (~d).any():
                outs.append(m[~d])
    return float(np.concatenate(ins).mean()), float(np.concatenate(outs).mean())


def restore_overfit(steps: int = 1200, seed: int = 0, model_cfg: ModelConfig | None = None,
                    frames: int = 8, size: int = 64, disc_channels: int = 16, progress=None) -> RestoreOverfitResult:
    model_cfg = model_cfg or ModelConfig(encoder_channels=64, num_swin_blocks=4, window_size=8)
    library = synthetic_templates(seed=seed)
    clean = synthetic_clip(frames, size, size, seed=seed, motion=(0, 1))
    recipe = moderate_recipe(seed, library)
    degraded, defects = degrade_sequence(clean, recipe, library)
    batch = Batch(degraded.to_tensor()[None], clean.to_tensor()[None], None, defects.masks[None])
    cfg = TrainConfig(crop=size, clip_len=frames, batch=1, seed=seed, disc_channels=disc_channels,
                      epochs=steps, steps_per_epoch=1, checkpoint_every=10**9)
    trainer = Trainer(model_cfg, cfg, BuiltinFlow())
    start = time.time()
    records = fit(trainer, FixedSource(batch), max_steps=steps, callback=progress, workers=False)
    seconds = time.time() - start

    trainer.model.eval()
    with torch.no_grad():
        out, mf, mb = trainer.generate(batch, return_masks=True)
    restored = FrameSequence.from_tensor(out[0].clamp(0, 1))
    flow = BuiltinFlow()
    inside, outside = mask_separation(mf, mb, defects.masks)
    return RestoreOverfitResult(
        psnr_degraded=psnr(degraded.frames, clean.frames),
        psnr_restored=psnr(restored.frames, clean.frames),
        ewarp_degraded=warping_error(degraded, flow, flow_frames=clean),
        ewarp_restored=warping_error(restored, flow, flow_frames=clean),
        ewarp_clean=warping_error(clean, flow, flow_frames=clean),
        mask_inside=inside,
        mask_outside=outside,
        steps=steps,
        seconds=seconds,
        records=records,
    )


@dataclass
class ColorizeOverfitResult:
    ab_error: float
    gray_baseline_error: float
    l_passthrough_exact: bool
    steps: int
    seconds: float
    records: list = field(default_factory=list, repr=False)


def colorize_overfit(steps: int = 800, seed: int = 0, model_cfg: ModelConfig | None = None,
                     frames: int = 8, size: int = 64, disc_channels: int = 16, progress=None) -> ColorizeOverfitResult:
    from .colorize import colorize_sequence, luminance
    from .videodata import ColorSpace, rgb_to_lab

    model_cfg = model_cfg or ModelConfig(encoder_channels=64, num_swin_blocks=4, window_size=8, mode=Mode.COLORIZE)
    clip = synthetic_clip(frames, size, size, seed=seed + 100, motion=(0, 1))
    batch = colorize_batch([clip.frames], [0])
    cfg = TrainConfig(crop=size, clip_len=frames, batch=1, seed=seed, disc_channels=disc_channels,
                      epochs=steps, steps_per_epoch=1, checkpoint_every=10**9)
    trainer = Trainer(model_cfg, cfg, BuiltinFlow())
    start = time.time()
    records = fit(trainer, FixedSource(batch), max_steps=steps, callback=progress, workers=False)
    seconds = time.time() - start

    lab_in = FrameSequence(np.concatenate([luminance(clip)[..., None], np.zeros(clip.frames.shape[:3] + (2,))], -1),
                           ColorSpace.LAB)
    out = colorize_sequence(lab_in, clip.frames[0], trainer.model, BuiltinFlow(), ref_index=0)
    truth = rgb_to_lab(clip).frames
    ab_err = float(np.abs(out.frames[..., 1:] - truth[..., 1:]).mean())
    gray_err = float(np.abs(truth[..., 1:]).mean())
    return ColorizeOverfitResult(
        ab_error=ab_err,
        gray_baseline_error=gray_err,
        l_passthrough_exact=bool(np.array_equal(out.frames[..., 0], lab_in.frames[..., 0])),
        steps=steps,
        seconds=seconds,
        records=records,
    )
