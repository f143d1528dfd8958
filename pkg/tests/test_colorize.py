import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from rtn.colorize import (
    ColorReference,
    coarse_color_transfer,
    colorize_sequence,
    correspondence,
    luminance,
)
from rtn.flow import ZeroFlow
from rtn.model import RTN, ModelConfig
from rtn.synthetic import synthetic_clip
from rtn.videodata import ColorSpace, FrameSequence, rgb_to_lab


def _unit(x):
    return F.normalize(x, dim=1)


def test_constant_reference_ab():
    ref_lab = torch.zeros(1, 3, 16, 16)
    ref_lab[:, 1], ref_lab[:, 2] = 0.3, -0.2
    ref = ColorReference(ref_lab, _unit(torch.randn(1, 8, 4, 4)))
    ab = coarse_color_transfer(_unit(torch.randn(1, 8, 4, 4)), ref, 0.01)
    assert ab.shape == (1, 2, 16, 16)
    assert torch.allclose(ab[:, 0], torch.tensor(0.3)) and torch.allclose(ab[:, 1], torch.tensor(-0.2))


def test_two_position_toy():
    # positions: query matches ref 0 with correlation 1, ref 1 with correlation 0
    ref_feat = torch.tensor([[1.0, 0.0], [0.0, 1.0]]).T.reshape(1, 2, 1, 2)
    gray_feat = torch.tensor([[1.0, 0.0], [1.0, 0.0]]).T.reshape(1, 2, 1, 2)
    ref_lab = torch.zeros(1, 3, 1, 2)
    ref_lab[0, 1, 0] = torch.tensor([10.0, -10.0])
    ab = coarse_color_transfer(gray_feat, ColorReference(ref_lab, ref_feat), temperature=1.0)
    e = math.e
    assert ab[0, 0, 0, 0].item() == pytest.approx(10 * e / (e + 1) - 10 / (e + 1), abs=1e-5)
    assert ab[0, 0, 0, 0].item() == pytest.approx(4.6212, abs=1e-4)
    assert ab[0, 1].abs().max() == 0


def test_low_temperature_self_match_recovers_reference():
    feat = _unit(torch.randn(1, 16, 4, 4))
    ref_lab = torch.rand(1, 3, 4, 4)
    ab = coarse_color_transfer(feat, ColorReference(ref_lab, feat), temperature=1e-3)
    assert (ab - ref_lab[:, 1:]).abs().max() <= 1e-4


def test_rows_sum_to_one_and_convex_hull():
    g = torch.Generator().manual_seed(0)
    a, b = _unit(torch.randn(2, 8, 4, 4, generator=g)), _unit(torch.randn(2, 8, 4, 4, generator=g))
    attn = correspondence(a, b, 0.01)
    assert (attn.sum(-1) - 1).abs().max() <= 1e-5
    ref_lab = torch.rand(2, 3, 16, 16, generator=g) * 2 - 1
    ab = coarse_color_transfer(a, ColorReference(ref_lab, b), 0.05)
    for c in range(2):
        lo = ref_lab[:, 1 + c].amin(dim=(1, 2)).view(2, 1, 1)
        hi = ref_lab[:, 1 + c].amax(dim=(1, 2)).view(2, 1, 1)
        assert (ab[:, c] >= lo - 1e-6).all() and (ab[:, c] <= hi + 1e-6).all()


def test_feature_mismatch():
    with pytest.raises(ValueError):
        correspondence(torch.zeros(1, 8, 4, 4), torch.zeros(1, 4, 4, 4), 0.01)


def _color_model():
    return RTN(ModelConfig(encoder_channels=8, num_swin_blocks=2, window_size=4, num_heads=2, head_dim=4,
                           mode="colorize", corr_channels=8))


def test_colorize_sequence_passes_luminance_exactly():
    clip = synthetic_clip(3, 32, 32, seed=3)
    lab = rgb_to_lab(clip)
    gray = FrameSequence(lab.frames[..., :1], ColorSpace.GRAY)
    gray_lab = FrameSequence(np.concatenate([lab.frames[..., :1], np.zeros_like(lab.frames[..., 1:])], -1),
                             ColorSpace.LAB)
    out = colorize_sequence(gray_lab, clip.frames[0], _color_model(), ZeroFlow(), ref_index=0)
    assert out.color_space is ColorSpace.LAB and len(out) == 3
    assert np.array_equal(out.frames[..., 0], gray_lab.frames[..., 0])
    assert np.array_equal(luminance(gray_lab), gray.frames[..., 0])


def test_colorize_sequence_errors():
    clip = synthetic_clip(2, 16, 16)
    model = _color_model()
    with pytest.raises(ValueError):
        colorize_sequence(clip, clip.frames[0], model, ZeroFlow(), ref_index=5)
    with pytest.raises(ValueError):
        colorize_sequence(clip, clip.frames[0][:8], model, ZeroFlow())
    restore = RTN(ModelConfig(encoder_channels=8, num_swin_blocks=2, window_size=4, num_heads=2, head_dim=4))
    with pytest.raises(ValueError, match="COLORIZE"):
        colorize_sequence(clip, clip.frames[0], restore, ZeroFlow())


def test_luminance_of_gray_rgb():
    seq = FrameSequence(np.full((1, 8, 8, 1), 1.0, np.float32), ColorSpace.GRAY)
    assert np.allclose(luminance(seq), 100.0, atol=1e-3)
