import math

import numpy as np
import pytest

from lightdecomp.distributions import ScalarHV
from lightdecomp.mixer import (
    LightLayout,
    Mixer,
    MixerConfig,
    circle_layout,
    hsv_to_rgb,
    pixel_weight,
    read_ppm,
    render_frame,
    write_ppm,
)
from oracles import circle_positions, mix_oracle

CFG16 = MixerConfig(width=16, height=16)


def frame(hues, values):
    return [ScalarHV(h, v) for h, v in zip(hues, values)]


def oracle_for(cfg, hues, values):
    pos = circle_positions(cfg.width, cfg.height, cfg.n_lights, cfg.radius_rel)
    return mix_oracle(cfg.width, cfg.height, pos, cfg.sigma_rel, cfg.clip_factor, cfg.epsilon, hues, values)


@pytest.mark.parametrize("clip", [1.0, None])
def test_matches_per_pixel_oracle(clip):
    cfg = MixerConfig(width=16, height=16, clip_factor=clip)
    mixer = Mixer(cfg)
    rng = np.random.default_rng(4)
    for _ in range(20):
        hues, values = rng.uniform(0, 2 * math.pi, 8), rng.uniform(0, 1, 8)
        values[rng.random(8) < 0.3] = 0.0
        res = mixer.mix(frame(hues, values))
        oh, ov, odeg = oracle_for(cfg, list(hues), list(values))
        assert np.array_equal(res.hue.bins, oh)
        assert np.array_equal(res.value.bins, ov)
        assert res.degenerate == odeg


def test_layout_clockwise_from_east():
    layout = circle_layout(MixerConfig(width=64, height=64))
    (x0, y0), (x2, y2) = layout.positions[0], layout.positions[2]
    assert x0 > 32 and y0 == pytest.approx(32)
    # a quarter turn on screen goes down (y grows downward)
    assert x2 == pytest.approx(32) and y2 > 32


def test_layout_outside_image_rejected():
    with pytest.raises(ValueError):
        circle_layout(MixerConfig(width=16, height=16), radius_rel=0.49)


def test_single_light_peak_at_position():
    cfg = CFG16
    layout = LightLayout(((8.0, 8.0),) + ((1.0, 1.0),) * 7)
    assert pixel_weight(cfg, layout, 0, 8.0, 8.0) == 1.0
    assert pixel_weight(cfg, layout, 0, 9.0, 8.0) < 1.0


def test_all_dark_frame_is_degenerate():
    res = Mixer(CFG16).mix(frame([0.0] * 8, [0.0] * 8))
    assert res.degenerate
    assert np.allclose(res.value.bins, 0.01)
    assert res.hue.bins[0] == 1.0


def test_single_hue_frame_puts_mass_in_one_bin():
    hue = 1.0
    res = Mixer(CFG16).mix(frame([hue] * 8, [0.8] * 8))
    assert res.hue.bins[int(hue / (2 * math.pi / 360))] == pytest.approx(1.0)


def test_histograms_normalized_and_value_bin0_zeroed():
    rng = np.random.default_rng(2)
    mixer = Mixer(CFG16)
    for _ in range(20):
        res = mixer.mix(frame(rng.uniform(0, 6.28, 8), rng.uniform(0, 1, 8)))
        assert abs(res.hue.bins.sum() - 1) < 1e-9 and abs(res.value.bins.sum() - 1) < 1e-9
        assert res.value.bins[0] == 0.0 or res.degenerate


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    mixer = Mixer(CFG16)
    hues, values = rng.uniform(0, 6.28, (5, 8)), rng.uniform(0, 1, (5, 8))
    h, v, _ = mixer.mix_batch(hues, values)
    for i in range(5):
        r = mixer.mix(frame(hues[i], values[i]))
        assert np.array_equal(h[i], r.hue.bins) and np.array_equal(v[i], r.value.bins)


def test_hue_scale_invariance():
    rng = np.random.default_rng(5)
    mixer = Mixer(CFG16)
    for _ in range(20):
        hues, values = rng.uniform(0, 6.28, 8), rng.uniform(0.3, 0.9, 8)
        base = mixer.mix(frame(hues, values)).hue
        for f in (0.9, 1.1):
            assert mixer.mix(frame(hues, values * f)).hue == base


def test_wrong_frame_length():
    with pytest.raises(ValueError):
        Mixer(CFG16).mix(frame([0.0] * 3, [1.0] * 3))


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        MixerConfig(width=4)
    with pytest.raises(ValueError):
        MixerConfig(clip_factor=0)
    cfg = MixerConfig(width=20, clip_factor=None)
    assert MixerConfig.from_json(cfg.to_json()) == cfg


def test_render_and_ppm_round_trip(tmp_path):
    cfg = CFG16
    img = render_frame(cfg, circle_layout(cfg), frame(np.linspace(0, 6, 8), [1.0] * 8))
    assert img.shape == (16, 16, 3)
    path = tmp_path / "f.ppm"
    write_ppm(path, img)
    rgb = read_ppm(path)
    expected = np.clip(np.rint(hsv_to_rgb(img) * 255), 0, 255).astype(np.uint8)
    assert np.array_equal(rgb, expected)


def test_hsv_to_rgb_primaries():
    img = np.array([[[0.0, 1.0, 1.0], [2 * math.pi / 3, 1.0, 1.0], [4 * math.pi / 3, 1.0, 1.0]]])
    assert np.allclose(hsv_to_rgb(img)[0], np.eye(3))
