import json
import math

import numpy as np
import pytest

from rtn.degrade import (
    LEGAL_RANGES,
    BlendMode,
    BlurParams,
    DegradationRecipe,
    Interp,
    NoiseKind,
    RecipeError,
    apply_noise,
    blend_contaminant,
    blur_kernel,
    color_jitter,
    degrade_sequence,
    draw_frame_params,
    gaussian_blur,
    identity_recipe,
    jpeg_roundtrip,
    load_template_library,
    resample_roundtrip,
    rerender,
    sample_recipe,
    save_template_library,
)
from rtn.metrics import psnr
from rtn.synthetic import synthetic_clip
from rtn.videodata import FrameSequence

# -- blending ---------------------------------------------------------------


@pytest.mark.parametrize("mode", list(BlendMode))
def test_blend_zero_opacity_identity(mode, rng):
    frame = rng.uniform(0, 1, (8, 8, 3))
    tpl = rng.uniform(0, 1, (8, 8))
    assert np.array_equal(blend_contaminant(frame, tpl, mode, 0.0), frame)


def test_blend_multiply_white_identity(rng):
    frame = rng.uniform(0, 1, (8, 8, 3))
    out = blend_contaminant(frame, np.ones((8, 8)), BlendMode.MULTIPLY, 0.8)
    assert np.allclose(out, frame)


def test_blend_add_values():
    frame = np.array([[[0.2]], [[0.8]]])
    out = blend_contaminant(frame, np.full((2, 1), 0.5), BlendMode.ADD, 1.0)
    assert out[0, 0, 0] == pytest.approx(0.7)
    assert out[1, 0, 0] == 1.0


def test_blend_subtract_and_multiply_formulas():
    frame = np.full((1, 1, 1), 0.6)
    tpl = np.full((1, 1), 0.25)
    assert blend_contaminant(frame, tpl, "SUBTRACT", 0.8)[0, 0, 0] == pytest.approx(0.4)
    assert blend_contaminant(frame, tpl, "MULTIPLY", 0.8)[0, 0, 0] == pytest.approx(0.6 * (1 - 0.8 * 0.75))


def test_blend_size_mismatch():
    with pytest.raises(ValueError):
        blend_contaminant(np.zeros((8, 8, 3)), np.zeros((8, 9)), "ADD", 1.0)


# -- noise ------------------------------------------------------------------


def test_noise_sigma_zero(rng):
    frame = rng.uniform(0, 1, (8, 8, 3))
    assert np.array_equal(apply_noise(frame, NoiseKind.GAUSSIAN, 0, rng), frame)


def test_gaussian_noise_statistics():
    frame = np.full((256, 256, 1), 0.5)
    out = apply_noise(frame, NoiseKind.GAUSSIAN, 25, np.random.default_rng(7))
    assert abs(out.mean() - 0.5) <= 0.005
    assert abs(out.std() - 25 / 255) <= 0.1 * 25 / 255


def test_speckle_on_zero_frame():
    out = apply_noise(np.zeros((16, 16, 3)), NoiseKind.SPECKLE, 50, np.random.default_rng(0))
    assert not out.any()


def test_noise_deterministic():
    frame = np.full((16, 16, 3), 0.4)
    a = apply_noise(frame, "GAUSSIAN", 30, np.random.default_rng(3))
    b = apply_noise(frame, "GAUSSIAN", 30, np.random.default_rng(3))
    assert np.array_equal(a, b)


# -- blur -------------------------------------------------------------------


def test_blur_constant_frame():
    frame = np.full((16, 16, 3), 0.3)
    out = gaussian_blur(frame, BlurParams(0.9, 0.4, 1.0, 3))
    assert np.allclose(out, 0.3, atol=1e-12)


def test_blur_isotropic_theta_invariant(rng):
    frame = rng.uniform(0, 1, (16, 16, 1))
    a = gaussian_blur(frame, BlurParams(0.7, 0.7, 0.0, 3))
    b = gaussian_blur(frame, BlurParams(0.7, 0.7, math.pi / 4, 3))
    assert np.abs(a - b).max() <= 1e-6


def test_blur_impulse_matches_direct_kernel():
    s1, s2 = 0.8, 0.2
    frame = np.zeros((15, 15, 1))
    frame[7, 7, 0] = 1.0
    out = gaussian_blur(frame, BlurParams(s1, s2, 0.0, 3))[..., 0]
    # theta = 0: covariance diag(s1^2, s2^2) along (x, y)
    ys, xs = np.mgrid[-3:4, -3:4]
    k = np.exp(-0.5 * (xs**2 / s1**2 + ys**2 / s2**2))
    k /= k.sum()
    expected = np.zeros((15, 15))
    expected[4:11, 4:11] = k
    assert np.abs(out - expected).max() <= 1e-6


def test_blur_kernel_sums_to_one():
    assert blur_kernel(BlurParams(0.5, 1.0, 2.0, 4)).sum() == pytest.approx(1.0)


def test_blur_rejects_degenerate():
    with pytest.raises(ValueError):
        blur_kernel(BlurParams(0.0, 0.5, 0.0, 3))


# -- resampling -------------------------------------------------------------


def _bilinear_matrix(n_in, n_out):
    """Half-pixel-centre bilinear weights, source index clamped at 0 and n_in - 1."""
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        w[i, i0] += 1 - lam
        w[i, i1] += lam
    return w


@pytest.mark.parametrize("down", list(Interp))
@pytest.mark.parametrize("up", list(Interp))
def test_resample_scale_one_identity(down, up, rng):
    frame = rng.uniform(0, 1, (16, 16, 3))
    assert np.array_equal(resample_roundtrip(frame, 1.0, down, up), frame)


@pytest.mark.parametrize("down", list(Interp))
@pytest.mark.parametrize("up", list(Interp))
def test_resample_constant_preserved(down, up):
    frame = np.full((20, 24, 3), 0.42)
    assert np.allclose(resample_roundtrip(frame, 0.6, down, up), 0.42, atol=1e-6)


def test_resample_line_matches_bilinear_weights():
    frame = np.zeros((32, 32, 1))
    frame[:, 13, 0] = 1.0
    out = resample_roundtrip(frame, 0.5, Interp.BILINEAR, Interp.BILINEAR)[..., 0]
    dh, dw = _bilinear_matrix(32, 16), _bilinear_matrix(32, 16)
    uh, uw = _bilinear_matrix(16, 32), _bilinear_matrix(16, 32)
    expected = uh @ (dh @ frame[..., 0] @ dw.T) @ uw.T
    assert np.abs(out - expected).max() <= 1e-6
    assert abs(out.sum() - frame.sum()) <= 0.05 * frame.sum()
    assert (out[:, 13] < 1).all()  # energy spread


def test_resample_too_small():
    with pytest.raises(ValueError):
        resample_roundtrip(np.zeros((8, 8, 1)), 0.4, "BILINEAR", "BILINEAR")


# -- jpeg -------------------------------------------------------------------


def test_jpeg_q100_mid_gray():
    frame = np.full((32, 32, 3), 0.5)
    assert np.abs(jpeg_roundtrip(frame, 100) - frame).max() <= 2 / 255


def test_jpeg_quality_monotone_on_checkerboard():
    yy, xx = np.mgrid[:64, :64]
    frame = np.repeat((((yy // 2) + (xx // 2)) % 2).astype(float)[..., None], 3, -1) * 0.8 + 0.1
    scores = [psnr(jpeg_roundtrip(frame, q), frame) for q in (40, 70, 90)]
    assert all(math.isfinite(s) for s in scores)
    assert scores[0] < scores[1] < scores[2]


def test_jpeg_floor_on_natural_frames():
    clip = synthetic_clip(3, 64, 64, seed=5)
    for frame in clip.frames:
        assert psnr(jpeg_roundtrip(frame, 40), frame) >= 20.0


def test_jpeg_grayscale_shape():
    out = jpeg_roundtrip(np.full((16, 16, 1), 0.25), 90)
    assert out.shape == (16, 16, 1)


# -- colour jitter ----------------------------------------------------------


def test_jitter_identity(rng):
    frame = rng.uniform(0, 1, (8, 8, 3))
    assert np.allclose(color_jitter(frame, 1.0, 1.0), frame)


def test_jitter_zero_contrast(rng):
    frame = rng.uniform(0, 1, (8, 8, 3))
    out = color_jitter(frame, 1.1, 0.0)
    assert np.allclose(out, min(1.0, 1.1 * frame.mean()))


def test_jitter_brightness():
    assert np.allclose(color_jitter(np.full((8, 8, 1), 0.5), 1.2, 1.0), 0.6)


# -- recipes ----------------------------------------------------------------


def test_recipe_deterministic(library):
    assert sample_recipe(library, 11).to_json() == sample_recipe(library, 11).to_json()
    assert sample_recipe(library, 11).to_json() != sample_recipe(library, 12).to_json()


def test_recipe_json_roundtrip(library):
    r = sample_recipe(library, 5)
    text = r.to_json()
    assert json.loads(text)["schema"] == 1
    assert DegradationRecipe.from_json(text).to_json() == text


def test_recipe_ranges_over_1000_samples(library):
    rs = [sample_recipe(library, s) for s in range(1000)]
    opac = [o for r in rs for o in r.opacities]
    assert 0.6 <= min(opac) and max(opac) <= 1.0
    assert all(5 <= r.noise_sigma <= 50 for r in rs)
    assert all(40 <= r.jpeg_quality <= 100 for r in rs)
    assert all(0 <= r.blur.theta <= math.pi for r in rs)
    assert all(0 < r.blur.sigma1 <= 1 and 0 < r.blur.sigma2 <= 1 for r in rs)
    assert all(1 <= len(r.template_ids) <= 4 for r in rs)
    assert {len(r.template_ids) for r in rs} == {1, 2, 3, 4}


def test_recipe_empty_library():
    with pytest.raises(RecipeError):
        sample_recipe({}, 0)


def test_recipe_validation():
    with pytest.raises(RecipeError):
        DegradationRecipe(noise_sigma=200)
    with pytest.raises(RecipeError):
        DegradationRecipe.from_dict({"schema": 2})


def test_template_library_roundtrip(tmp_path, library):
    save_template_library(library, tmp_path)
    loaded = load_template_library(tmp_path)
    assert set(loaded) == set(library)
    for k in library:
        assert np.abs(loaded[k].texture - library[k].texture).max() <= 1 / 255


# -- sequence rendering -----------------------------------------------------


def test_identity_recipe_near_identity():
    yy, xx = np.mgrid[:32, :32] / 31.0
    frame = np.stack([0.2 + 0.6 * xx, 0.3 + 0.4 * yy, 0.5 + 0.2 * xx * yy], -1)
    clip = FrameSequence(np.stack([frame, frame[::-1], frame[:, ::-1]]).astype(np.float32))
    out, masks = degrade_sequence(clip, identity_recipe(), {})
    assert np.abs(out.frames - clip.frames).max() <= 2 / 255 + 1e-6
    assert not masks.masks.any()


def test_identity_recipe_textured_content():
    # high-frequency texture survives quality 100 as well
    clip = synthetic_clip(3, 32, 32, seed=1)
    out, _ = degrade_sequence(clip, identity_recipe(), {})
    assert np.abs(out.frames - clip.frames).max() <= 2 / 255 + 1e-6


def test_zero_perturbation_constant_params(library):
    r = sample_recipe(library, 3, perturb_sigma=0.0)
    params = draw_frame_params(r, 6)
    first = params[0].to_dict()
    for p in params[1:]:
        d = p.to_dict()
        for k in ("opacities", "noise_sigma", "sigma1", "sigma2", "theta", "resample_scale",
                  "jpeg_quality", "brightness", "contrast"):
            assert d[k] == first[k]
    assert params[1].drifts != params[0].drifts


def test_adjacent_frame_noise_sigma_change(library):
    r = sample_recipe(library, 21, perturb_sigma=0.05)
    params = draw_frame_params(r, 50)
    sig = np.array([p.noise_sigma for p in params])
    rel = np.abs(np.diff(sig)) / sig[:-1]
    assert rel.max() <= 0.20


def test_frame_params_stay_in_range(library):
    for seed in range(30):
        r = sample_recipe(library, seed, perturb_sigma=0.2)
        for p in draw_frame_params(r, 10):
            assert 5 <= p.noise_sigma <= 50
            assert 40 <= p.jpeg_quality <= 100
            assert all(0.6 <= o <= 1.0 for o in p.opacities)
            assert 0.8 <= p.brightness <= 1.2 and 0.9 <= p.contrast <= 1.0


def test_degrade_deterministic_and_in_range(library):
    clip = synthetic_clip(4, 32, 32, seed=2)
    r = sample_recipe(library, 8)
    a, ma = degrade_sequence(clip, r, library)
    b, mb = degrade_sequence(clip, DegradationRecipe.from_json(r.to_json()), library)
    assert a.frames.tobytes() == b.frames.tobytes()
    assert np.array_equal(ma.masks, mb.masks)
    assert a.frames.min() >= 0 and a.frames.max() <= 1
    assert ma.masks.shape == (4, 32, 32)


def test_rerender_from_log(library):
    clip = synthetic_clip(3, 32, 32, seed=4)
    r = sample_recipe(library, 9)
    out, masks, log = degrade_sequence(clip, r, library, return_log=True)
    assert log["stages"] == ["blend", "blur", "resample", "noise", "jpeg", "jitter"]
    assert "libjpeg" in log["codec"]
    again, masks2 = rerender(clip, r, json.loads(json.dumps(log["frames"])), library)
    assert again.frames.tobytes() == out.frames.tobytes()
    assert np.array_equal(masks.masks, masks2.masks)


def test_defect_mask_marks_blend_changes(library):
    clip = synthetic_clip(2, 32, 32, seed=6)
    r = sample_recipe(library, 13)
    r.noise_sigma, r.jpeg_quality, r.resample_scale = 0.0, 100, 1.0
    r.perturb_sigma = 0.0
    r.blur = BlurParams(1e-3, 1e-3, 0.0, 3)
    r.brightness = r.contrast = 1.0
    from rtn.degrade.pipeline import draw_frame_params, render_frame, resolve_templates
    from rtn.degrade.templates import place_template

    p = draw_frame_params(r, 1)[0]
    tpls = resolve_templates(r, library)
    x = clip.frames[0].astype(np.float64)
    for tpl, mode, op, pl, dr in zip(tpls, r.blend_modes, p.opacities, r.placements, p.drifts):
        placed = place_template(tpl, pl, (32, 32), dr)
        x = blend_contaminant(x, 1 - placed if mode is BlendMode.MULTIPLY else placed, mode, op)
    expected = (np.abs(x - clip.frames[0]) > 1 / 255).any(-1)
    _, mask = render_frame(clip.frames[0], p, r, tpls)
    assert np.array_equal(mask, expected)


def test_degrade_missing_template():
    clip = synthetic_clip(2, 32, 32)
    r = DegradationRecipe(template_ids=["nope"], blend_modes=["ADD"], opacities=[0.7],
                          placements=[__import__("rtn.degrade", fromlist=["Placement"]).Placement(0.0, (0, 0, 32, 32))])
    with pytest.raises(RecipeError, match="nope"):
        degrade_sequence(clip, r, {})


def test_degrade_gray_sequence(library):
    clip = synthetic_clip(2, 32, 32, channels=1)
    out, _ = degrade_sequence(clip, sample_recipe(library, 1), library)
    assert out.frames.shape == (2, 32, 32, 1)


def test_legal_ranges_cover_sampling():
    from rtn.degrade import SAMPLE_RANGES

    for k, (lo, hi) in SAMPLE_RANGES.items():
        llo, lhi = LEGAL_RANGES[k]
        assert llo <= max(lo, llo) and hi <= lhi
