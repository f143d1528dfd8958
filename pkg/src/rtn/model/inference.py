"""Sequence-level inference and weight checkpoints."""

from __future__ import annotations

from pathlib import Path

import torch

from ..flow import BuiltinFlow
from ..videodata import FrameSequence
from .network import RTN, Mode, ModelConfig

CHECKPOINT_FORMAT = "rtn-checkpoint/1"


@torch.no_grad()
def restore_sequence(frames: FrameSequence, model: RTN, flow=None) -> FrameSequence:
    """Run the bidirectional recurrence over the whole sequence; output is clamped to [0, 1]."""
    if model.cfg.mode is not Mode.RESTORE:
        raise ValueError("restore_sequence needs RESTORE-mode weights")
    if frames.frames.shape[-1] != model.cfg.image_channels:
        raise ValueError(
            f"model expects {model.cfg.image_channels} channels, sequence has {frames.frames.shape[-1]}"
        )
    flow = flow or BuiltinFlow()
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    x = frames.to_tensor(dtype).unsqueeze(0)
    y = model(x, flow_provider=flow).clamp(0.0, 1.0)[0]
    model.train(was_training)
    return FrameSequence.from_tensor(y, frames.color_space, frames.fps)


def save_checkpoint(path, model: RTN, extra: dict | None = None) -> None:
    """Single archive: hierarchical parameter names plus the embedded model config."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, expect_mode: Mode | str | None = None) -> tuple[RTN, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an RTN checkpoint")
    cfg = ModelConfig.from_dict(payload["model_config"])
    if expect_mode is not None and cfg.mode is not Mode(expect_mode):
        raise ValueError(f"{path}: checkpoint was trained in {cfg.mode.value} mode, not {Mode(expect_mode).value}")
    model = RTN(cfg)
    model.load_state_dict(payload["state_dict"])
    return model, payload
