"""Tests for partition probabilities, AUC brackets, and the Type-II grid."""

import itertools
import math

import numpy as np
import pytest

from graphleak import adversary as adv
from graphleak import diffusion as dif
from graphleak import graphgen


def enumerate_partition_probs(n, m):
    """Brute force: average over all size-m subsets and all pairs."""
    nodes = range(n)
    counts = {"ss": 0, "su": 0, "uu": 0}
    total = 0
    for subset in itertools.combinations(nodes, m):
        inside = set(subset)
        for i, j in itertools.combinations(nodes, 2):
            k = (i in inside) + (j in inside)
            counts[("uu", "su", "ss")[k]] += 1
            total += 1
    return tuple(counts[p] / total for p in ("ss", "su", "uu"))


def test_partition_probs_match_enumeration_all_small_n():
    for n in range(2, 9):
        for m in range(0, n + 1):
            rho = m / n
            probs = adv.partition_probs(n, rho)
            expect = enumerate_partition_probs(n, m)
            assert probs.p_ss == pytest.approx(expect[0], abs=1e-12)
            assert probs.p_su == pytest.approx(expect[1], abs=1e-12)
            assert probs.p_uu == pytest.approx(expect[2], abs=1e-12)


def test_partition_probs_four_nodes_half():
    probs = adv.partition_probs(4, 0.5)
    assert probs.p_ss == pytest.approx(1 / 6)
    assert probs.p_su == pytest.approx(2 / 3)
    assert probs.p_uu == pytest.approx(1 / 6)


def test_partition_limits():
    probs = adv.partition_probs(100, 0.5)
    assert (probs.limit_ss, probs.limit_su, probs.limit_uu) == (0.25, 0.5, 0.25)
    full = adv.partition_probs(10, 1.0)
    assert (full.p_ss, full.p_su, full.p_uu) == (1.0, 0.0, 0.0)


def test_partition_probs_rejects_small_n():
    with pytest.raises(adv.AdversaryError):
        adv.partition_probs(1, 0.5)


def test_bracket_reference_width():
    b = adv.bracket(0.534, 0.774, 0.5)
    assert b.width == pytest.approx(0.12, abs=1e-12)
    assert b.lower == pytest.approx(0.534 + 0.24 * 0.25)
    assert b.upper == pytest.approx(0.534 + 0.24 * 0.75)


def test_bracket_endpoint_matched():
    for r1, r3 in [(0.5, 0.9), (0.534, 0.774)]:
        at0 = adv.bracket(r1, r3, 0.0)
        assert at0.lower == at0.upper == r1
        at1 = adv.bracket(r1, r3, 1.0)
        assert at1.lower == at1.upper == pytest.approx(r3)


def test_bracket_geometry_over_rho():
    widths = []
    for rho in np.linspace(0, 1, 21):
        b = adv.bracket(0.5, 0.9, float(rho))
        assert b.lower <= b.upper + 1e-12
        widths.append(b.width)
    assert np.argmax(widths) == 10  # rho = 0.5
    assert max(widths) == pytest.approx((0.9 - 0.5) / 2)


def test_bracket_rejects_bad_order():
    with pytest.raises(adv.AdversaryError):
        adv.bracket(0.8, 0.6, 0.5)


def test_weighted_bounds_hand_arithmetic():
    probs = adv.partition_probs(4, 0.5)  # (1/6, 2/3, 1/6)
    wb = adv.weighted_bounds(0.5, 0.6, 0.9, probs, kappa=0.0)
    assert wb.upper == pytest.approx(0.9 / 6 + 0.6 * 2 / 3 + 0.5 / 6)
    assert wb.lower == pytest.approx(max(0.5, 0.9 / 6 + 0.5 * (2 / 3 + 1 / 6)))


def test_weighted_bounds_kappa_degrades_ss_term():
    probs = adv.partition_probs(100, 0.8)
    base = adv.weighted_bounds(0.5, 0.7, 0.9, probs, kappa=0.0)
    worse = adv.weighted_bounds(0.5, 0.7, 0.9, probs, kappa=1.0, c_deg=0.035)
    assert worse.lower == pytest.approx(
        max(0.5, (0.9 - 0.035) * probs.p_ss + 0.5 * (probs.p_su + probs.p_uu))
    )
    assert worse.lower <= base.lower


def test_weighted_bounds_refined_half_edge():
    probs = adv.partition_probs(100, 0.5)
    no_sep = adv.weighted_bounds(
        0.5, 0.7, 0.9, probs, mean_separation=0.0, sigma=1.0
    )
    # Phi0(0) = 1/2: no refinement over chance on the SU term
    assert no_sep.refined_lower == pytest.approx(
        max(0.5, 0.9 * probs.p_ss + 0.5 * probs.p_su + 0.5 * probs.p_uu)
    )
    matched = adv.weighted_bounds(
        0.5, 0.7, 0.9, probs, mean_separation=1.0, sigma=1.0
    )
    half = adv.normal_cdf(1.0 / math.sqrt(2.0))
    assert half == pytest.approx(0.7602, abs=1e-4)
    assert matched.refined_lower == pytest.approx(
        0.9 * probs.p_ss + half * probs.p_su + 0.5 * probs.p_uu
    )


def test_weighted_bounds_boundary_rhos():
    at1 = adv.weighted_bounds(0.5, 0.7, 0.9, adv.partition_probs(50, 1.0))
    assert at1.upper == pytest.approx(0.9)
    at0 = adv.weighted_bounds(0.5, 0.7, 0.9, adv.partition_probs(50, 0.0))
    assert at0.upper == pytest.approx(0.5)


def test_weighted_bounds_rejects_bad_ordering():
    probs = adv.partition_probs(10, 0.5)
    with pytest.raises(adv.AdversaryError):
        adv.weighted_bounds(0.9, 0.7, 0.5, probs)


def test_knowledge_validation():
    adv.AdversaryKnowledge(mechanism="gaussian", rho=0.5).validate()
    with pytest.raises(adv.AdversaryError):
        adv.AdversaryKnowledge(mechanism="bogus").validate()
    with pytest.raises(adv.AdversaryError):
        adv.AdversaryKnowledge(rho=1.5).validate()


@pytest.fixture(scope="module")
def small_setup():
    params = graphgen.SbmParams(
        n=40, num_classes=2, p_in=0.4, p_out=0.05, mean_radius=2.5,
        feature_noise=0.4, feature_dim=5,
    )
    graph = graphgen.generate_sbm(params, seed=0)
    schedule = dif.build_schedule(40)
    rng = np.random.default_rng(1)
    windows, signals = [], []
    for center in rng.choice(graph.n, size=6, replace=False):
        win = graphgen.sample_egonet(graph, int(center), 8, seed=int(center))
        windows.append(win)
        signals.append(win.features.copy())
    denoiser = dif.train_denoiser(
        windows, signals, "features", schedule,
        config=dif.DenoiserConfig(window=8, cond_dim=6, steps=40),
        steps=120, seed=2,
    )
    return adv.Type2Setup(
        graph_n=graph.n,
        windows=windows[:3],
        signals=signals[:3],
        signal_kind="features",
        denoiser=denoiser,
        schedule=schedule,
        mechanism="gaussian",
        epsilon=5.0,
        delta=1e-5,
        sensitivity=1.0,
    )


def test_simulate_type2_grid_shape_and_columns(small_setup):
    cells = adv.simulate_type2(small_setup, [0.5, 1.0], [0.0, 0.3], seeds=[0])
    # kappa=0 runs one sign, kappa=0.3 runs both: (2 rhos) x (1 + 2 signs)
    assert len(cells) == 2 * 3
    for cell in cells:
        assert 0.0 <= cell.ap <= 1.0
        assert 0.0 <= cell.auc_full <= 1.0
        assert cell.bound_lower <= cell.bound_upper + 1e-12
        for col in adv.GRID_CSV_COLUMNS:
            assert hasattr(cell, col)


def test_simulate_type2_full_observation_has_no_su_uu(small_setup):
    cells = adv.simulate_type2(small_setup, [1.0], [0.0], seeds=[0])
    cell = cells[0]
    assert math.isnan(cell.auc_su)
    assert math.isnan(cell.auc_uu)
    assert cell.auc_weighted == pytest.approx(cell.auc_ss)
