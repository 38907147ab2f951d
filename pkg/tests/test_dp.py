"""Tests for DP calibration, clipping, perturbation, and noise estimation."""

import math

import numpy as np
import pytest

from graphleak import dp


def test_calibrate_gaussian_reference_value():
    spec = dp.calibrate("gaussian", epsilon=1.0, delta=1e-5, sensitivity=1.0)
    assert spec.sigma == pytest.approx(math.sqrt(2 * math.log(1.25e5)), rel=1e-12)
    assert spec.sigma == pytest.approx(4.845, abs=5e-4)


def test_calibrate_laplace_variance_identity():
    spec = dp.calibrate("laplace", epsilon=2.0, sensitivity=1.0)
    assert spec.laplace_scale == pytest.approx(0.5)
    assert spec.sigma**2 == pytest.approx(0.5)


def test_calibrate_rdp_hits_floor():
    spec = dp.calibrate("rdp", epsilon=1.0, delta=1e-5, alpha=10.0, sensitivity=1.0)
    # ln(1e5)/9 > 1, so the floor engages and sigma = sqrt(10/(2*0.01))
    assert spec.sigma == pytest.approx(math.sqrt(500.0), rel=1e-12)
    assert spec.sigma == pytest.approx(22.36, abs=5e-3)


def test_calibrate_rejects_bad_params():
    with pytest.raises(dp.DpError):
        dp.calibrate("gaussian", epsilon=0.0, delta=1e-5)
    with pytest.raises(dp.DpError):
        dp.calibrate("gaussian", epsilon=1.0, delta=1.0)
    with pytest.raises(dp.DpError):
        dp.calibrate("rdp", epsilon=1.0, delta=1e-5, alpha=1.0)
    with pytest.raises(dp.DpError):
        dp.calibrate("gaussian", epsilon=1.0, delta=1e-5, sensitivity=0.0)


def test_sigma_monotone_decreasing_in_epsilon():
    # RDP only responds to epsilon above its floor region, so the grid starts
    # where eps - ln(1/delta)/(alpha-1) > 0.01.
    grids = {
        "gaussian": [0.1, 0.5, 1, 2, 5, 8, 16],
        "laplace": [0.1, 0.5, 1, 2, 5, 8, 16],
        "rdp": [1.5, 2, 3, 5, 8, 16],
    }
    for mech, eps_grid in grids.items():
        sigmas = [
            dp.calibrate(mech, epsilon=e, delta=1e-5, alpha=10.0).sigma
            for e in eps_grid
        ]
        assert all(a > b for a, b in zip(sigmas, sigmas[1:])), mech


def test_clip_rows_cases():
    row = np.array([[2.0, 0.0]])
    clipped = dp.clip_rows(row, 1.0)
    assert np.allclose(clipped, [[1.0, 0.0]])

    short = np.array([[0.3, 0.4]])  # norm 0.5
    assert np.array_equal(dp.clip_rows(short, 1.0), short)

    rng = np.random.default_rng(0)
    m = rng.normal(size=(20, 5)) * 3
    once = dp.clip_rows(m, 1.0)
    assert np.array_equal(dp.clip_rows(once, 1.0), once)


def test_perturb_empirical_variance_matches_sigma():
    spec = dp.calibrate("gaussian", epsilon=2.0, delta=1e-5, sensitivity=1.0)
    base = np.zeros((1000, 100))
    noisy = dp.perturb(base, spec, seed=1)
    assert np.var(noisy) == pytest.approx(spec.sigma**2, rel=0.02)

    lap = dp.calibrate("laplace", epsilon=1.0, sensitivity=1.0)
    noisy = dp.perturb(base, lap, seed=2)
    assert np.var(noisy) == pytest.approx(lap.sigma**2, rel=0.02)


def test_perturb_laplace_kurtosis_distinguishes_mechanisms():
    base = np.zeros((1000, 100))
    lap = dp.perturb(base, dp.calibrate("laplace", epsilon=1.0), seed=3).ravel()
    gau = dp.perturb(
        base, dp.calibrate("gaussian", epsilon=1.0, delta=1e-5), seed=3
    ).ravel()

    def excess_kurtosis(x):
        x = x - x.mean()
        return np.mean(x**4) / np.mean(x**2) ** 2 - 3.0

    assert excess_kurtosis(lap) == pytest.approx(3.0, abs=0.3)
    assert abs(excess_kurtosis(gau)) < 0.3


def test_perturb_noiseless_spec_is_identity():
    spec = dp.calibrate("none")
    m = np.random.default_rng(4).normal(size=(8, 3)) * 0.1
    assert np.array_equal(dp.perturb(m, spec, seed=5), m)


def test_perturb_clips_first():
    spec = dp.calibrate("none", sensitivity=1.0)
    m = np.array([[3.0, 4.0]])  # norm 5 -> clipped to 1
    out = dp.perturb(m, spec, seed=0)
    assert np.linalg.norm(out) == pytest.approx(1.0)


def test_perturb_mean_unbiased():
    spec = dp.calibrate("gaussian", epsilon=1.0, delta=1e-5)
    base = np.zeros((500, 100))
    noisy = dp.perturb(base, spec, seed=6)
    n = base.size
    assert abs(noisy.mean()) < 3 * spec.sigma / math.sqrt(n)


def test_estimate_noise_scale_recovers_sigma():
    rng = np.random.default_rng(7)
    clean = rng.normal(0.0, 0.5, size=(100, 100))
    noisy = clean + rng.normal(0.0, 1.0, size=clean.shape)
    est = dp.estimate_noise_scale(noisy, float(np.var(clean)))
    assert est.sigma2 == pytest.approx(1.0, abs=0.05)
    assert not est.clamped


def test_estimate_noise_scale_zero_noise_clamps_at_zero():
    rng = np.random.default_rng(8)
    clean = rng.normal(size=(50, 50))
    est = dp.estimate_noise_scale(clean, float(np.var(clean)))
    assert est.sigma2 == pytest.approx(0.0, abs=1e-12)


def test_estimate_noise_scale_overstated_clean_sets_flag():
    rng = np.random.default_rng(9)
    clean = rng.normal(size=(50, 50))
    est = dp.estimate_noise_scale(clean, 2.0 * float(np.var(clean)))
    assert est.sigma2 == 0.0
    assert est.clamped


def test_sigma_relative_error_propagation():
    for kappa in [0.01, 0.1, 0.3, 0.9]:
        err = dp.sigma_relative_error(kappa, sign=+1)
        assert err == pytest.approx(kappa / (1 + kappa), rel=1e-12)
        assert err <= kappa
        # direct check against the calibration formula
        s = dp.calibrate("gaussian", epsilon=1.0, delta=1e-5).sigma
        s_hat = dp.calibrate("gaussian", epsilon=1.0 + kappa, delta=1e-5).sigma
        assert abs(s_hat - s) / s == pytest.approx(err, rel=1e-12)
    assert dp.sigma_relative_error(0.5, sign=-1) == pytest.approx(1.0)
    assert dp.sigma_relative_error(1.0, sign=-1) == math.inf
