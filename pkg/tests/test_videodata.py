import math

import numpy as np
import pytest
import torch
from PIL import Image

from rtn.videodata import (
    ColorSpace,
    FrameError,
    FrameSequence,
    lab_to_rgb,
    lab_to_rgb_tensor,
    load_sequence,
    rgb_to_lab,
    rgb_to_lab_tensor,
    save_sequence,
)


def _write(path, arr, mode=None):
    Image.fromarray(arr, mode).save(path)


def test_load_black_frames(tmp_path):
    for i in range(1, 4):
        _write(tmp_path / f"frame_{i:06d}.png", np.zeros((16, 16, 3), np.uint8))
    seq = load_sequence(tmp_path)
    assert seq.frames.shape == (3, 16, 16, 3)
    assert not seq.frames.any()


def test_load_gap_names_missing_frame(tmp_path):
    for i in (1, 3):
        _write(tmp_path / f"frame_{i:06d}.png", np.zeros((8, 8, 3), np.uint8))
    with pytest.raises(FrameError, match="frame_000002.png"):
        load_sequence(tmp_path)


def test_load_single_white_frame(tmp_path):
    _write(tmp_path / "frame_000001.png", np.full((8, 8, 3), 255, np.uint8))
    seq = load_sequence(tmp_path)
    assert seq.frames.shape == (1, 8, 8, 3)
    assert np.all(seq.frames == 1.0)


def test_load_dimension_mismatch(tmp_path):
    _write(tmp_path / "frame_000001.png", np.zeros((8, 8, 3), np.uint8))
    _write(tmp_path / "frame_000002.png", np.zeros((9, 8, 3), np.uint8))
    with pytest.raises(FrameError, match="frame_000002.png"):
        load_sequence(tmp_path)


def test_load_unreadable(tmp_path):
    (tmp_path / "frame_000001.png").write_bytes(b"not a png")
    with pytest.raises(FrameError, match="frame_000001.png"):
        load_sequence(tmp_path)


def test_load_16bit(tmp_path):
    arr = np.full((8, 8), 65535, np.uint16)
    arr[0, 0] = 32768
    Image.fromarray(arr).save(tmp_path / "frame_000001.png")
    seq = load_sequence(tmp_path)
    assert seq.color_space is ColorSpace.GRAY
    assert seq.frames[0, 1, 1, 0] == 1.0
    assert seq.frames[0, 0, 0, 0] == pytest.approx(32768 / 65535, abs=1e-6)


def test_save_quantisation_and_clamp(tmp_path):
    frames = np.zeros((2, 8, 8, 3), np.float32)
    frames[0] = 0.5
    frames[1] = 1.2
    save_sequence(FrameSequence(frames), tmp_path)
    a = np.asarray(Image.open(tmp_path / "frame_000001.png"))
    b = np.asarray(Image.open(tmp_path / "frame_000002.png"))
    assert np.all(a == 128) and np.all(b == 255)
    back = load_sequence(tmp_path)
    assert back.frames[0, 0, 0, 0] == pytest.approx(128 / 255)


def test_save_load_roundtrip_error(tmp_path, rng):
    frames = rng.uniform(0, 1, (3, 10, 12, 3)).astype(np.float32)
    save_sequence(FrameSequence(frames), tmp_path)
    back = load_sequence(tmp_path)
    assert np.abs(back.frames - frames).max() <= 1 / 510 + 1e-7


def test_save_rejects_lab(tmp_path):
    lab = FrameSequence(np.zeros((1, 8, 8, 3)), ColorSpace.LAB)
    with pytest.raises(FrameError):
        save_sequence(lab, tmp_path)


def _reference_lab(r, g, b):
    """Plain-math sRGB -> XYZ (D65) -> CIELAB."""

    def lin(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rl, gl, bl = lin(r), lin(g), lin(b)
    x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl
    y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl
    z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl

    def f(t):
        d = 6 / 29
        return t ** (1 / 3) if t > d**3 else t / (3 * d * d) + 4 / 29

    fx, fy, fz = f(x / 0.95047), f(y / 1.0), f(z / 1.08883)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def _lab(rgb):
    return rgb_to_lab_tensor(torch.tensor(rgb, dtype=torch.float64)).numpy()


def test_lab_black_and_white():
    assert np.allclose(_lab([0.0, 0.0, 0.0]), 0.0, atol=1e-9)
    white = _lab([1.0, 1.0, 1.0])
    assert white[0] == pytest.approx(100.0, abs=1e-4)
    assert abs(white[1]) <= 0.01 and abs(white[2]) <= 0.01


def test_lab_red_matches_reference():
    ref = _reference_lab(1.0, 0.0, 0.0)
    assert np.allclose(_lab([1.0, 0.0, 0.0]), ref, atol=1e-3)
    # published sRGB red under D65
    assert np.allclose(ref, (53.2408, 80.0925, 67.2032), atol=2e-3)


def test_lab_random_colours_match_reference(rng):
    for rgb in rng.uniform(0, 1, (20, 3)):
        assert np.allclose(_lab(rgb), _reference_lab(*rgb), atol=1e-6)


def test_lab_roundtrip(rng):
    x = rng.uniform(0.01, 0.99, (2, 9, 9, 3))
    seq = FrameSequence(x)
    back = lab_to_rgb(rgb_to_lab(seq))
    assert back.color_space is ColorSpace.RGB
    assert np.abs(back.frames - x).max() <= 1e-4


def test_lab_wrong_space():
    with pytest.raises(FrameError):
        lab_to_rgb(FrameSequence(np.zeros((1, 8, 8, 3))))
    with pytest.raises(FrameError):
        rgb_to_lab(FrameSequence(np.zeros((1, 8, 8, 3)), ColorSpace.LAB))


def _fd_check(fn, x, h=1e-5):
    x = x.clone().requires_grad_(True)
    w = torch.randn(fn(x).shape, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    (fn(x) * w).sum().backward()
    analytic = x.grad.clone()
    numeric = torch.zeros_like(x)
    flat = x.detach().view(-1)
    for i in range(flat.numel()):
        xp, xm = flat.clone(), flat.clone()
        xp[i] += h
        xm[i] -= h
        numeric.view(-1)[i] = ((fn(xp.view_as(x)) * w).sum() - (fn(xm.view_as(x)) * w).sum()) / (2 * h)
    return float(((analytic - numeric).abs() / numeric.abs().clamp(min=1e-6)).max())


def test_rgb_to_lab_gradient(rng):
    x = torch.tensor(rng.uniform(0.1, 0.9, (4, 3)))
    assert _fd_check(rgb_to_lab_tensor, x) <= 1e-4


def test_lab_to_rgb_gradient(rng):
    rgb = torch.tensor(rng.uniform(0.15, 0.85, (4, 3)))
    lab = rgb_to_lab_tensor(rgb)
    assert _fd_check(lab_to_rgb_tensor, lab) <= 1e-4


def test_frame_sequence_invariants():
    with pytest.raises(FrameError):
        FrameSequence(np.zeros((1, 4, 8, 3)))
    with pytest.raises(FrameError):
        FrameSequence(np.zeros((0, 8, 8, 3)))
    with pytest.raises(FrameError):
        FrameSequence(np.zeros((1, 8, 8, 4)))
