"""Command-line interface: ``rtn degrade|train|restore|colorize|eval``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, dump_config, load_config
from .degrade import (
    DefectMaskSequence,
    DegradationRecipe,
    RecipeError,
    degrade_sequence,
    load_template_library,
    sample_recipe,
    synthetic_templates,
)
from .flow import BuiltinFlow, ZeroFlow
from .metrics import MetricError, corpus_mean, external_metric, psnr, ssim, warping_error, write_report
from .model.network import Mode
from .train import ClipSource, Trainer, TrainingAborted, fit, read_loss_log
from .videodata import (
    FRAME_PATTERN,
    ColorSpace,
    FrameError,
    FrameSequence,
    lab_to_rgb,
    list_frames,
    load_sequence,
    save_frame,
    save_sequence,
)

log = logging.getLogger("rtn")

EXIT_ERROR = 1


class CommandError(RuntimeError):
    pass


def _flow(name: str):
    return ZeroFlow() if name == "zero" else BuiltinFlow()


def _sequence_dirs(root: Path) -> dict[str, Path]:
    """A frame directory itself, or every sub-directory holding frames (one sequence each)."""
    root = Path(root)
    if not root.is_dir():
        raise FrameError(f"not a directory: {root}")
    try:
        list_frames(root)
        return {root.name: root}
    except FrameError:
        pass
    found = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            list_frames(sub)
        except FrameError:
            continue
        found[sub.name] = sub
    if not found:
        raise FrameError(f"no frame sequences under {root}")
    return found


# ---------------------------------------------------------------------------
# degrade


def cmd_degrade(args) -> None:
    clean = load_sequence(args.inp)
    if args.templates:
        library = load_template_library(args.templates)
    elif args.recipe:
        library = {}  # a stored recipe must name templates that actually exist
    else:
        library = synthetic_templates(seed=args.seed)
    if args.recipe:
        try:
            recipe = DegradationRecipe.from_json(Path(args.recipe).read_text())
        except OSError as exc:
            raise CommandError(f"cannot read recipe: {exc}") from exc
    else:
        recipe = sample_recipe(library, args.seed, args.perturb_sigma)
    degraded, masks, frame_log = degrade_sequence(clean, recipe, library, return_log=True)
    out = Path(args.out)
    save_sequence(degraded, out)
    resolved = recipe.to_dict()
    resolved["codec"] = frame_log["codec"]
    (out / "recipe.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    (out / "render_log.json").write_text(json.dumps(frame_log, indent=2, sort_keys=True))
    if args.emit_masks:
        _save_masks(masks, out / "masks")
    print(f"degraded {len(degraded)} frames -> {out}")


def _save_masks(masks: DefectMaskSequence, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(masks.masks, start=1):
        save_frame(m.astype(np.float64)[..., None], directory / FRAME_PATTERN.format(i))


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> None:
    model_cfg, train_cfg = load_config(args.config, args.mode)
    space = ColorSpace.RGB
    sequences = []
    for name, d in _sequence_dirs(args.data).items():
        seq = load_sequence(d)
        if model_cfg.mode is Mode.COLORIZE and seq.color_space is not ColorSpace.RGB:
            raise CommandError(f"colorize training needs colour clips; {name} is {seq.color_space.value}")
        if model_cfg.mode is Mode.RESTORE and seq.frames.shape[-1] != model_cfg.image_channels:
            raise CommandError(f"{name} has {seq.frames.shape[-1]} channels, model expects {model_cfg.image_channels}")
        sequences.append(seq)
        space = seq.color_space
    library = load_template_library(train_cfg.templates) if train_cfg.templates else None
    source = ClipSource(sequences, train_cfg, model_cfg.mode, library)
    trainer = Trainer(model_cfg, train_cfg, _flow(args.flow))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        trainer.load(args.resume)
        log.info("resumed from %s at step %d", args.resume, trainer.step)
    (out / "config.yaml").write_text(dump_config(model_cfg, train_cfg))
    fit(trainer, source, out, max_steps=args.max_steps, workers=not args.no_workers)
    records = read_loss_log(out / "loss_log.jsonl")
    if records:
        from .plotting import plot_losses

        plot_losses(records, out / "loss_curve.png")
    print(f"trained to step {trainer.step} ({space.value} data) -> {out / 'latest.pt'}")


# ---------------------------------------------------------------------------
# inference


def _load_model(path, mode: Mode):
    from .model.inference import load_checkpoint

    try:
        model, _ = load_checkpoint(path, expect_mode=mode)
    except (OSError, RuntimeError, KeyError) as exc:
        raise CommandError(f"cannot load checkpoint {path}: {exc}") from exc
    return model


def cmd_restore(args) -> None:
    from .model.inference import restore_sequence

    model = _load_model(args.ckpt, Mode.RESTORE)
    seq = load_sequence(args.inp)
    out = restore_sequence(seq, model, _flow(args.flow))
    save_sequence(out, args.out)
    print(f"restored {len(out)} frames -> {args.out}")


def cmd_colorize(args) -> None:
    from .colorize import colorize_sequence
    from .videodata import _read_png

    model = _load_model(args.ckpt, Mode.COLORIZE)
    gray = load_sequence(args.inp)
    ref = _read_png(Path(args.ref))
    if ref.shape[-1] != 3:
        raise CommandError("reference frame must be a colour (RGB) PNG")
    # the CLI takes 1-based frame indices, matching frame_%06d.png numbering
    lab = colorize_sequence(gray, ref, model, _flow(args.flow), ref_index=args.ref_index - 1)
    save_sequence(lab_to_rgb(lab), args.out)
    print(f"colorized {len(lab)} frames -> {args.out}")


# ---------------------------------------------------------------------------
# eval


def _evaluate_pair(pred: FrameSequence, gt: FrameSequence, flow_source: str, flow) -> dict:
    if pred.frames.shape != gt.frames.shape:
        raise MetricError(f"prediction {pred.frames.shape} and ground truth {gt.frames.shape} differ")
    psnrs = [psnr(p, t) for p, t in zip(pred.frames, gt.frames)]
    ssims = [ssim(p, t) for p, t in zip(pred.frames, gt.frames)]
    mse = float(np.mean((pred.frames.astype(np.float64) - gt.frames) ** 2))
    res = {
        "psnr": math.inf if mse == 0 else float(10 * np.log10(1.0 / mse)),
        "ssim": float(np.mean(ssims)),
        "psnr_per_frame": psnrs,
        "ssim_per_frame": ssims,
        "frames": len(pred),
    }
    if len(pred) >= 2:
        flow_frames = gt if flow_source == "gt" else pred
        res["ewarp"] = warping_error(pred, flow, flow_frames=flow_frames)
        res["ewarp_gt"] = warping_error(gt, flow, flow_frames=flow_frames)
    else:
        res["ewarp"] = res["ewarp_gt"] = math.nan
    return res


def cmd_eval(args) -> None:
    preds, gts = _sequence_dirs(args.pred), _sequence_dirs(args.gt)
    if len(preds) == 1 and len(gts) == 1:
        pairs = {next(iter(gts)): (next(iter(preds.values())), next(iter(gts.values())))}
    else:
        missing = sorted(set(gts) ^ set(preds))
        if missing:
            raise MetricError(f"sequences present on only one side: {missing}")
        pairs = {k: (preds[k], gts[k]) for k in gts}
    flow = _flow(args.flow)
    sequences = {}
    for name, (p_dir, g_dir) in pairs.items():
        pred, gt = load_sequence(p_dir), load_sequence(g_dir)
        if len(pred) != len(gt):
            raise MetricError(f"{name}: {len(pred)} predicted frames vs {len(gt)} ground-truth frames")
        sequences[name] = _evaluate_pair(pred, gt, args.flow_source, flow)
        if args.external:
            sequences[name]["external"] = external_metric(args.external, p_dir)
    keys = ["psnr", "ssim", "ewarp"] + (["external"] if args.external else [])
    mean = {k: corpus_mean([s[k] for s in sequences.values()]) for k in keys}
    report = {"flow_source": args.flow_source, "sequences": sequences, "mean": mean}
    write_report(args.report, report)
    from .plotting import plot_eval

    plot_eval(report, Path(args.report).with_suffix(".png"))
    print("\t".join(["sequence"] + keys))
    for name, s in list(sequences.items()) + [("MEAN", mean)]:
        print("\t".join([name] + [f"{s[k]:.6g}" for k in keys]))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtn", description="Old-film restoration and colorization with a recurrent transformer.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("degrade", help="synthesize an old-film version of a clean frame sequence")
    d.add_argument("--in", dest="inp", required=True, help="directory of clean frame_%%06d.png frames")
    d.add_argument("--out", required=True, help="output directory for degraded frames and recipe.json")
    d.add_argument("--templates", help="directory of contaminant template PNGs (default: built-in synthetic set)")
    d.add_argument("--seed", type=int, default=0, help="recipe sampling seed")
    d.add_argument("--recipe", help="recipe JSON to render instead of sampling one from --seed")
    d.add_argument("--perturb-sigma", type=float, default=0.05, help="per-frame parameter jitter (relative)")
    d.add_argument("--emit-masks", action="store_true", help="also write defect masks to OUT/masks")
    d.set_defaults(func=cmd_degrade)

    t = sub.add_parser("train", help="train on clean clips degraded on the fly")
    t.add_argument("--data", required=True, help="frame directory, or a directory of frame directories")
    t.add_argument("--config", required=True, help="YAML config with 'model' and 'train' sections")
    t.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    t.add_argument("--out", required=True, help="checkpoint directory (also gets loss_log.jsonl, loss_curve.png)")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--max-steps", type=int, help="stop after this global step")
    t.add_argument("--flow", choices=["builtin", "zero"], default="builtin", help="flow provider")
    t.add_argument("--no-workers", action="store_true", help="render batches in the main thread")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("restore", help="restore a degraded frame sequence")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--ckpt", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--flow", choices=["builtin", "zero"], default="builtin")
    r.set_defaults(func=cmd_restore)

    c = sub.add_parser("colorize", help="colorize a gray sequence from one colorized reference frame")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--ref", required=True, help="colorized PNG of one input frame")
    c.add_argument("--ref-index", type=int, required=True, help="1-based index of the frame --ref corresponds to")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--flow", choices=["builtin", "zero"], default="builtin")
    c.set_defaults(func=cmd_colorize)

    e = sub.add_parser("eval", help="PSNR / SSIM / warping error report (JSON plus a PNG figure)")
    e.add_argument("--pred", required=True, help="predicted frames (or directory of sequences)")
    e.add_argument("--gt", required=True, help="ground-truth frames (or directory of sequences)")
    e.add_argument("--flow-source", choices=["gt", "pred"], default="gt", help="frames the warping-error flows come from")
    e.add_argument("--report", required=True, help="JSON report path; the figure is written next to it as .png")
    e.add_argument("--flow", choices=["builtin", "zero"], default="builtin")
    e.add_argument("--external", help="external scorer command: called as CMD <pred_dir>, prints one number")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except (FrameError, RecipeError, ConfigError, MetricError, CommandError, TrainingAborted, ValueError, OSError) as exc:
        print(f"rtn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
