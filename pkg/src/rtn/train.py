"""Adversarial training harness: on-the-fly degraded pairs, alternating D/G Adam updates,
learning-rate schedule, checkpoints and a JSON-lines loss log."""

from __future__ import annotations

import enum
import json
import logging
import math
import queue
import threading
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .colorize import colorize_clip, make_reference
from .degrade import degrade_sequence, sample_recipe, synthetic_templates
from .flow import BuiltinFlow
from .losses import LossWeights, RandomFeatures, TemporalDiscriminator, d_hinge_loss, lab_clip_to_rgb, score, total_loss
from .model.network import RTN, Mode, ModelConfig, clip_flows
from .videodata import FrameSequence, rgb_to_lab_tensor, scale_lab

log = logging.getLogger(__name__)


class Decay(str, enum.Enum):
    NONE = "NONE"
    LINEAR_AFTER = "LINEAR_AFTER"


@dataclass
class TrainConfig:
    epochs: int = 20
    lr_main: float = 2e-4
    lr_flow: float = 2.5e-5
    adam_betas: tuple[float, float] = (0.9, 0.99)
    crop: int = 256
    clip_len: int = 8
    batch: int = 4
    flow_freeze_epochs: int = 5
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    decay: Decay = Decay.NONE
    steps_per_epoch: Optional[int] = None
    checkpoint_every: int = 1000
    disc_channels: int = 32
    perturb_sigma: float = 0.05
    templates: Optional[str] = None

    def __post_init__(self):
        self.decay = Decay(self.decay)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        for name in ("epochs", "crop", "clip_len", "batch", "checkpoint_every", "disc_channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_main <= 0 or self.lr_flow < 0:
            raise ValueError("learning rates must be positive")
        if self.clip_len < TemporalDiscriminator.min_frames:
            raise ValueError(f"clip_len must be >= {TemporalDiscriminator.min_frames}")

    def validate_for(self, model_cfg: ModelConfig):
        unit = model_cfg.alignment * model_cfg.window_size
        if self.crop % unit:
            raise ValueError(f"crop {self.crop} must be divisible by {unit} (stride * 2 * window_size)")

    def to_dict(self):
        d = asdict(self)
        d["decay"] = self.decay.value
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """NONE: constant. LINEAR_AFTER: constant for the first half of ``total_steps``, then linear to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if cfg.decay is Decay.NONE:
        return cfg.lr_main
    hold = total_steps / 2.0
    if step <= hold:
        return cfg.lr_main
    return cfg.lr_main * (total_steps - step) / (total_steps - hold)


class TrainingAborted(RuntimeError):
    def __init__(self, record: dict):
        super().__init__(f"non-finite loss at step {record.get('step')}: {record}")
        self.record = record


# ---------------------------------------------------------------------------
# data


@dataclass
class Batch:
    """Restore: ``inputs`` degraded RGB/gray clips, ``targets`` clean clips.
    Colorize: ``inputs`` scaled L (N, T, 1, H, W), ``targets`` scaled LAB, ``reference`` scaled LAB frames."""

    inputs: torch.Tensor
    targets: torch.Tensor
    reference: Optional[torch.Tensor] = None
    defect_masks: Optional[np.ndarray] = None


def to_lab_clip(frames: np.ndarray) -> torch.Tensor:
    """(T, H, W, 3) RGB -> scaled LAB (T, 3, H, W) in float32."""
    lab = scale_lab(rgb_to_lab_tensor(torch.from_numpy(frames.astype(np.float64))))
    return lab.permute(0, 3, 1, 2).float()


def colorize_batch(clips: list[np.ndarray], ref_indices: list[int]) -> Batch:
    labs = torch.stack([to_lab_clip(c) for c in clips])
    refs = torch.stack([labs[i, r] for i, r in enumerate(ref_indices)])
    return Batch(labs[:, :, :1].contiguous(), labs, refs)


class ClipSource:
    """Random crops of clean sequences, degraded on the fly with a fresh recipe per clip.

    Every batch is a pure function of (seed, step), which makes resumed runs match uninterrupted ones.
    """

    def __init__(self, sequences: list[FrameSequence], cfg: TrainConfig, mode: Mode = Mode.RESTORE, library=None):
        if not sequences:
            raise ValueError("no training sequences")
        self.sequences = sequences
        self.cfg = cfg
        self.mode = Mode(mode)
        self.library = library or synthetic_templates(seed=cfg.seed)
        for s in sequences:
            t, h, w, _ = s.frames.shape
            if t < cfg.clip_len or h < cfg.crop or w < cfg.crop:
                raise ValueError(f"sequence {s.frames.shape} smaller than clip {cfg.clip_len} x {cfg.crop}^2")

    @property
    def steps_per_epoch(self) -> int:
        return self.cfg.steps_per_epoch or max(1, math.ceil(len(self.sequences) / self.cfg.batch))

    def _crop(self, rng):
        seq = self.sequences[int(rng.integers(len(self.sequences)))]
        t, h, w, _ = seq.frames.shape
        c, n = self.cfg.crop, self.cfg.clip_len
        t0 = int(rng.integers(0, t - n + 1))
        y0 = int(rng.integers(0, h - c + 1))
        x0 = int(rng.integers(0, w - c + 1))
        return FrameSequence(seq.frames[t0 : t0 + n, y0 : y0 + c, x0 : x0 + c], seq.color_space)

    def batch(self, step: int) -> Batch:
        rng = np.random.default_rng([self.cfg.seed, step])
        clips = [self._crop(rng) for _ in range(self.cfg.batch)]
        if self.mode is Mode.COLORIZE:
            refs = [int(rng.integers(0, self.cfg.clip_len)) for _ in clips]
            return colorize_batch([c.frames for c in clips], refs)
        degraded, masks = [], []
        for clip in clips:
            recipe = sample_recipe(self.library, int(rng.integers(0, 2**32)), self.cfg.perturb_sigma)
            d, m = degrade_sequence(clip, recipe, self.library)
            degraded.append(d.to_tensor())
            masks.append(m.masks)
        clean = torch.stack([c.to_tensor() for c in clips])
        return Batch(torch.stack(degraded), clean, None, np.stack(masks))


class FixedSource:
    """The same batch at every step (overfit scenarios)."""

    def __init__(self, batch: Batch, steps_per_epoch: int = 1):
        self._batch = batch
        self.steps_per_epoch = steps_per_epoch

    def batch(self, step: int) -> Batch:
        return self._batch


def prefetch(source, start: int, stop: int, depth: int = 2):
    """Yield ``(step, batch)`` while a worker thread renders ahead through a bounded queue."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    stop_flag = threading.Event()

    def work():
        try:
            for step in range(start, stop):
                if stop_flag.is_set():
                    return
                q.put((step, source.batch(step)))
        except BaseException as exc:  # handed to the consumer
            q.put(exc)
        q.put(None)

    th = threading.Thread(target=work, daemon=True)
    th.start()
    try:
        while True:
            item = q.get()
            if item is None:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop_flag.set()
        while th.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                th.join(0.05)


# ---------------------------------------------------------------------------
# optimisation


class Trainer:
    def __init__(self, model_cfg: ModelConfig, cfg: TrainConfig, flow_provider=None, fx=None, dtype=torch.float32):
        torch.manual_seed(cfg.seed)
        self.model_cfg = model_cfg
        self.cfg = cfg
        self.model = RTN(model_cfg).to(dtype)
        disc_in = 3 if model_cfg.mode is Mode.COLORIZE else model_cfg.image_channels
        self.disc = TemporalDiscriminator(disc_in, cfg.disc_channels).to(dtype)
        self.fx = (fx or RandomFeatures(seed=cfg.seed)).to(dtype)
        self.flow = flow_provider or BuiltinFlow()
        groups = [{"params": list(self.model.parameters()), "lr": cfg.lr_main, "name": "main"}]
        self.flow_params = list(self.flow.parameters()) if getattr(self.flow, "trainable", False) else []
        if self.flow_params:
            groups.append({"params": self.flow_params, "lr": cfg.lr_flow, "name": "flow"})
        self.opt_g = torch.optim.Adam(groups, lr=cfg.lr_main, betas=cfg.adam_betas)
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=cfg.lr_main, betas=cfg.adam_betas)
        self.step = 0
        self.colorize = model_cfg.mode is Mode.COLORIZE

    def set_lr(self, lr: float):
        scale = lr / self.cfg.lr_main
        for g in self.opt_g.param_groups:
            g["lr"] = self.cfg.lr_flow * scale if g.get("name") == "flow" else lr
        for g in self.opt_d.param_groups:
            g["lr"] = lr

    def flow_frozen(self, epoch: int) -> bool:
        return not self.flow_params or epoch < self.cfg.flow_freeze_epochs

    def generate(self, batch: Batch, epoch: int = 0, return_masks: bool = False):
        """Generator output for a batch; colorize mode returns the full scaled-LAB clip."""
        frozen = self.flow_frozen(epoch)
        for p in self.flow_params:
            p.requires_grad_(not frozen)
        with torch.set_grad_enabled(torch.is_grad_enabled() and not frozen):
            flows = clip_flows(batch.inputs, self.flow)
        if not self.colorize:
            return self.model(batch.inputs, *flows, return_masks=return_masks)
        ref = make_reference(self.model, batch.reference)
        out = colorize_clip(self.model, batch.inputs, ref, *flows, return_masks=return_masks)
        ab = out[0] if return_masks else out
        lab = torch.cat([batch.inputs, ab], 2)
        return (lab,) + tuple(out[1:]) if return_masks else lab

    def _disc_view(self, clip):
        return lab_clip_to_rgb(clip) if self.colorize else clip

    def train_step(self, batch: Batch, epoch: int = 0, lr: Optional[float] = None) -> dict:
        dtype = next(self.model.parameters()).dtype
        batch = Batch(batch.inputs.to(dtype), batch.targets.to(dtype),
                      None if batch.reference is None else batch.reference.to(dtype), batch.defect_masks)
        lr = self.cfg.lr_main if lr is None else lr
        self.set_lr(lr)
        self.model.train()
        pred = self.generate(batch, epoch)
        pred_view = self._disc_view(pred)
        target_view = self._disc_view(batch.targets)

        # discriminator: clean clips are real, restored clips fake
        self.disc.requires_grad_(True)
        self.opt_d.zero_grad(set_to_none=True)
        d_loss = d_hinge_loss(score(self.disc(target_view)), score(self.disc(pred_view.detach())))
        d_loss.backward()
        self.opt_d.step()

        # generator
        self.disc.requires_grad_(False)
        self.opt_g.zero_grad(set_to_none=True)
        fake = score(self.disc(pred_view)) if self.cfg.loss_weights.lambda_G else None
        parts = total_loss(pred, batch.targets, self.fx, fake, self.cfg.loss_weights, colorize=self.colorize,
                           perc_pred=pred_view if self.colorize else None,
                           perc_target=target_view if self.colorize else None)
        record = {
            "step": self.step,
            "l1": parts["l1"].item(),
            "perc": parts["perc"].item(),
            "g": parts["g"].item(),
            "d": d_loss.item(),
            "lr": lr,
        }
        if not all(math.isfinite(v) for v in (record["l1"], record["perc"], record["g"], record["d"])):
            raise TrainingAborted(record)
        parts["total"].backward()
        self.opt_g.step()
        self.disc.requires_grad_(True)
        self.step += 1
        return record

    # -- persistence --------------------------------------------------------

    def state(self) -> dict:
        return {
            "format": "rtn-checkpoint/1",
            "model_config": self.model_cfg.to_dict(),
            "train_config": self.cfg.to_dict(),
            "state_dict": self.model.state_dict(),
            "disc": self.disc.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "flow": [p.detach().clone() for p in self.flow_params],
            "step": self.step,
        }

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state(), path)

    def load(self, path):
        payload = torch.load(path, map_location="cpu", weights_only=False)
        self.model.load_state_dict(payload["state_dict"])
        self.disc.load_state_dict(payload["disc"])
        self.opt_g.load_state_dict(payload["opt_g"])
        self.opt_d.load_state_dict(payload["opt_d"])
        with torch.no_grad():
            for p, saved in zip(self.flow_params, payload.get("flow", [])):
                p.copy_(saved)
        self.step = int(payload["step"])
        return payload


def total_steps(cfg: TrainConfig, steps_per_epoch: int) -> int:
    n = cfg.epochs * steps_per_epoch
    return 2 * n if cfg.decay is Decay.LINEAR_AFTER else n


def fit(trainer: Trainer, source, out_dir=None, max_steps: Optional[int] = None, log_path=None,
        callback=None, workers: bool = True) -> list[dict]:
    """Run (or continue) training until ``max_steps`` or the configured schedule ends."""
    spe = source.steps_per_epoch
    total = total_steps(trainer.cfg, spe)
    stop = total if max_steps is None else min(total, max_steps)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_path or out_dir / "loss_log.jsonl"
    records = []
    batches = prefetch(source, trainer.step, stop) if workers else ((s, source.batch(s)) for s in range(trainer.step, stop))
    for step, batch in batches:
        rec = trainer.train_step(batch, epoch=step // spe, lr=lr_at(step, total, trainer.cfg))
        records.append(rec)
        if log_path:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
        if callback:
            callback(rec)
        if out_dir and trainer.step % trainer.cfg.checkpoint_every == 0:
            trainer.save(out_dir / f"step_{trainer.step:07d}.pt")
            trainer.save(out_dir / "latest.pt")
        if step % 50 == 0:
            log.info("step %d l1 %.4f perc %.4f g %.4f d %.4f", rec["step"], rec["l1"], rec["perc"], rec["g"], rec["d"])
    if out_dir:
        trainer.save(out_dir / "latest.pt")
    return records


def read_loss_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
