import math

import numpy as np
import pytest

import riskcal


def test_phantom_determinism_and_shapes():
    a = riskcal.generate_phantom(seed=7)
    b = riskcal.generate_phantom(seed=7)
    assert a["dose"].shape == (8, 16, 16)
    assert len(a["channels"]) == 3
    assert np.array_equal(a["dose"], b["dose"])
    c = riskcal.generate_phantom(seed=8)
    assert not np.array_equal(a["dose"], c["dose"])
    fg, bg, all_ = a["masks"]
    assert np.array_equal(fg | bg, all_)


def test_interval_and_loss_roundtrip():
    s = riskcal.generate_phantom(seed=3)
    dose = s["dose"]
    point = np.zeros_like(dose)
    offsets = np.ones_like(dose)
    lo, hi = riskcal.build_interval(point, offsets, offsets, 20.0)
    mask = s["masks"][2]
    assert riskcal.interval_loss(lo, hi, dose, mask) == 0.0
    lo0, hi0 = riskcal.build_interval(point, offsets, offsets, 0.0)
    assert riskcal.interval_loss(lo0, hi0, dose, mask) > 0.5


def test_hoeffding_ucb_value():
    losses = [0.1] * 100
    expected = 0.1 + math.sqrt(math.log(10.0) / 200.0)
    assert riskcal.hoeffding_ucb(losses, 0.1) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        riskcal.hoeffding_ucb([], 0.1)


def _entries(n_samples, rng, lam_needed=0.5):
    entries = []
    for _ in range(n_samples):
        dose = rng.uniform(0.0, 1.0, size=(2, 4, 4))
        point = dose + rng.uniform(-lam_needed, lam_needed, size=dose.shape)
        offsets = np.ones_like(dose)
        mask = np.ones(dose.shape, dtype=bool)
        entries.append((point, offsets, offsets, dose, mask))
    return entries


def test_calibration_single_group_matches_pooled():
    rng = np.random.default_rng(0)
    entries = _entries(10, rng)
    pooled = riskcal.rcps_calibrate(entries, alpha=0.5, delta=0.5, lambda_max=3.0)
    joint = riskcal.sg_rcps_calibrate([entries], alpha=0.5, delta=0.5, lambda_max=3.0)
    assert pooled["feasible"] and joint["feasible"]
    assert pooled["lambda_hat"] == joint["lambda_hat"]


def test_calibration_infeasible_penalty():
    rng = np.random.default_rng(1)
    with pytest.raises(RuntimeError):
        riskcal.rcps_calibrate(_entries(2, rng), alpha=0.1, delta=0.1)


def test_train_predict_trial():
    rng = np.random.default_rng(2)
    samples = []
    for i in range(6):
        p = riskcal.generate_phantom(seed=100 + i, dims=(4, 8, 8))
        samples.append((p["channels"], p["dose"]))
    model = riskcal.train_model(samples, epochs=5, seed=1)
    assert model["loss_trace"][-1] <= model["loss_trace"][0]
    point, lower, upper = riskcal.predict(model, samples[0][0])
    assert point.shape == (4, 8, 8)
    assert (lower > 0).all() and (upper > 0).all()
