import math

import numpy as np
import pytest

import pulsemap


def test_toeplitz_layout():
    x = np.arange(1.0, 7.0)
    m = pulsemap.toeplitz_map(x)
    assert m.shape == (3, 3)
    for i in range(3):
        for j in range(3):
            assert m[i, j] == x[i + j]


def test_scalogram_ridge_at_tone_frequency():
    fs = 128.0
    t = np.arange(640) / fs
    values, freqs = pulsemap.cwt_scalogram(np.sin(2 * np.pi * 4.0 * t), fs)
    assert values.shape == (len(freqs), 640)
    ridge = np.asarray(freqs)[values[:, 320].argmax()]
    assert abs(ridge - 4.0) <= 0.2


def test_spwvd_rows_and_short_input():
    fs = 256.0
    t = np.arange(512) / fs
    values, freqs = pulsemap.spwvd_map(np.sin(2 * np.pi * 32.0 * t), fs)
    assert values.shape == (129, 512)
    assert abs(values[:, 256].argmax() - 32) <= 1
    with pytest.raises(pulsemap.DataError):
        pulsemap.spwvd_map(np.ones(10), fs)


def test_render_image_range():
    img = pulsemap.render_image(np.random.default_rng(0).normal(size=(20, 30)), 32)
    assert img.shape == (32, 32, 3)
    assert img.min() == 0.0 and img.max() == 1.0
    assert np.array_equal(img[..., 0], img[..., 2])


def test_normalization_endpoints():
    out = pulsemap.normalize_personal([-3.0, 1.0, 5.0], -3.0, 5.0)
    assert out == pytest.approx([0.0, 500.0, 1000.0], rel=1e-12, abs=1e-12)


def test_mask_and_loss():
    masked = pulsemap.plan_mask(196, 0.75, 1)
    assert len(masked) == 147 and len(set(masked)) == 147
    assert pulsemap.pretrain_loss(1.0, 2.0) == 2.4
    with pytest.raises(pulsemap.ConfigError):
        pulsemap.plan_mask(16, 1.5, 0)


def test_folds_and_metrics():
    folds = pulsemap.kfold_split([f"s{i}" for i in range(27)], 10, 0)
    assert sorted(len(f) for f in folds) == [2] * 3 + [3] * 7
    m = pulsemap.compute_metrics([0, 0, 0, 0], [0, 1, 0, 1], 2)
    assert m["accuracy"] == 0.5
    assert math.isclose(m["f1"], 1.0 / 3.0)


def test_cli_entry(tmp_path):
    code, _, _ = pulsemap.run_command(["synth", "--out", str(tmp_path / "d"), "--subjects", "2", "--per-subject", "4"])
    assert code == 0
    assert (tmp_path / "d" / "s01" / "labels.csv").exists()
    code, _, err = pulsemap.run_command(["frobnicate"])
    assert code == 2
    assert pulsemap.lr_schedule(0, 10, 0.5) == 0.5
