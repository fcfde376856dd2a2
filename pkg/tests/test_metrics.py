"""Distance tests: closed forms, a brute-force oracle, and metric axioms."""

import itertools
import math

import numpy as np
import pytest

from varimcf.errors import ConfigError, SolverFailure, SupportTooLarge
from varimcf.flow import FlowConfig, run
from varimcf.metrics import (BLResult, DiscreteMeasure, bounded_lipschitz,
                             load_measure_csv, save_measure_csv,
                             stability_certificate)
from varimcf.varifold import DiscreteVarifold


def dirac(x, w=1.0):
    return DiscreteMeasure(np.atleast_2d(np.asarray(x, float)), np.array([w]))


def brute_force_two_point(coef, gap, steps=401):
    """Grid search over test values for a two-point support."""
    grid = np.linspace(-1.0, 1.0, steps)
    best = -np.inf
    for a, b in itertools.product(grid, grid):
        if abs(a - b) <= gap + 1e-12:
            best = max(best, coef[0] * a + coef[1] * b)
    return best


@pytest.mark.parametrize("gap,expect", [(0.5, 0.5), (1.0, 1.0), (5.0, 2.0)])
def test_unit_dirac_pair_closed_form(gap, expect):
    mu = dirac([0.0])
    nu = dirac([gap])
    res = bounded_lipschitz(mu, nu)
    assert res.distance == pytest.approx(expect, abs=1e-9)
    # brute-force oracle over a discretized test-function space
    oracle = brute_force_two_point(np.array([-1.0, 1.0]), gap)
    assert res.distance == pytest.approx(oracle, abs=2e-2)


def test_weighted_dirac_pair_against_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(10):
        w1, w2 = rng.uniform(0.1, 2.0, 2)
        gap = rng.uniform(0.05, 4.0)
        res = bounded_lipschitz(dirac([0.0], w1), dirac([gap], w2))
        oracle = brute_force_two_point(np.array([-w1, w2]), gap)
        assert res.distance == pytest.approx(oracle, abs=2e-2)


def test_identical_measures_give_zero():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(7, 3))
    w = rng.uniform(0.1, 1.0, 7)
    mu = DiscreteMeasure(pts, w)
    assert bounded_lipschitz(mu, mu).distance == pytest.approx(0.0, abs=1e-12)


def test_same_point_masses_differ_by_total_variation():
    res = bounded_lipschitz(dirac([0.3, -1.0], 0.75), dirac([0.3, -1.0], 0.5))
    assert res.distance == pytest.approx(0.25, abs=1e-9)


def test_far_mass_saturates_test_function():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1.0, 1.0, size=(5, 2))
    w = rng.uniform(0.2, 1.0, 5)
    mu = DiscreteMeasure(pts, w)
    m = 0.037
    nu = DiscreteMeasure(np.vstack([pts, [[10.0, 10.0]]]), np.append(w, m))
    res = bounded_lipschitz(mu, nu)
    assert res.distance == pytest.approx(m, abs=1e-9)


def test_symmetry_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(5):
        mu = DiscreteMeasure(rng.normal(size=(6, 2)), rng.uniform(0.1, 1.0, 6))
        nu = DiscreteMeasure(rng.normal(size=(4, 2)), rng.uniform(0.1, 1.0, 4))
        a = bounded_lipschitz(mu, nu).distance
        b = bounded_lipschitz(nu, mu).distance
        assert a == pytest.approx(b, abs=1e-8)


def test_triangle_inequality_on_random_triples():
    rng = np.random.default_rng(4)
    for _ in range(10):
        ms = [DiscreteMeasure(rng.normal(size=(5, 2)), rng.uniform(0.1, 1.0, 5))
              for _ in range(3)]
        ab = bounded_lipschitz(ms[0], ms[1]).distance
        bc = bounded_lipschitz(ms[1], ms[2]).distance
        ac = bounded_lipschitz(ms[0], ms[2]).distance
        assert ac <= ab + bc + 1e-8


def test_homogeneous_in_mass():
    rng = np.random.default_rng(6)
    pts_a, pts_b = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    wa, wb = rng.uniform(0.1, 1.0, 4), rng.uniform(0.1, 1.0, 3)
    base = bounded_lipschitz(DiscreteMeasure(pts_a, wa),
                             DiscreteMeasure(pts_b, wb)).distance
    scaled = bounded_lipschitz(DiscreteMeasure(pts_a, 3.0 * wa),
                               DiscreteMeasure(pts_b, 3.0 * wb)).distance
    assert scaled == pytest.approx(3.0 * base, rel=1e-8)


def test_exact_duplicates_are_merged():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    mu = DiscreteMeasure(pts, np.array([0.25, 0.25, 0.5]))
    nu = DiscreteMeasure(np.array([[0.0, 0.0], [1.0, 0.0]]),
                         np.array([0.5, 0.5]))
    res = bounded_lipschitz(mu, nu)
    assert res.distance == pytest.approx(0.0, abs=1e-12)
    assert len(res.points) == 2


def test_scalar_support_promotes_to_column():
    mu = DiscreteMeasure(np.array([0.5, 1.0, 5.0]), np.ones(3))
    nu = DiscreteMeasure(np.array([0.5, 1.0, 2.0]), np.ones(3))
    res = bounded_lipschitz(mu, nu)
    assert mu.points.shape == (3, 1)
    assert res.distance == pytest.approx(2.0, abs=1e-9)


def test_support_cap_enforced():
    rng = np.random.default_rng(7)
    mu = DiscreteMeasure(rng.normal(size=(30, 2)), np.ones(30))
    nu = DiscreteMeasure(rng.normal(size=(30, 2)), np.ones(30))
    with pytest.raises(SupportTooLarge):
        bounded_lipschitz(mu, nu, support_cap=50)


def test_measure_validation():
    with pytest.raises(ConfigError):
        DiscreteMeasure(np.zeros((2, 2)), np.array([1.0, -0.1]))
    with pytest.raises(ConfigError):
        DiscreteMeasure(np.zeros((2, 2)), np.array([1.0]))
    with pytest.raises(ConfigError):
        bounded_lipschitz(DiscreteMeasure(np.zeros((1, 2)), np.ones(1)),
                          DiscreteMeasure(np.zeros((1, 3)), np.ones(1)))


def test_certificate_feasibility_check_rejects_corrupt_phi():
    pts = np.array([[0.0, 0.0], [0.1, 0.0]])
    bad_box = BLResult(1.0, np.array([1.5, 0.0]), pts, "corrupt")
    with pytest.raises(SolverFailure):
        bad_box.verify_feasible()
    bad_lip = BLResult(1.0, np.array([1.0, -1.0]), pts, "corrupt")
    with pytest.raises(SolverFailure):
        bad_lip.verify_feasible()


def test_measure_csv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    mu = DiscreteMeasure(rng.normal(size=(6, 3)), rng.uniform(0.1, 1.0, 6))
    path = tmp_path / "mu.csv"
    save_measure_csv(path, mu)
    back = load_measure_csv(path)
    assert np.array_equal(back.points, mu.points)
    assert np.array_equal(back.weights, mu.weights)


# ---------------------------------------------------------------------------
# flow stability


def polygon_circle(N, r=1.0, jitter=None):
    th = (np.arange(N) + 0.5) / N * 2.0 * math.pi
    pos = np.stack([r * np.cos(th), r * np.sin(th)], 1)
    if jitter is not None:
        pos = pos + jitter
    tang = np.stack([-np.sin(th), np.cos(th)], 1)
    P = np.einsum("ai,aj->aij", tang, tang)
    m = np.full(N, 2.0 * math.pi * r / N)
    return DiscreteVarifold.from_arrays(pos, P, m, d=1)


def small_config(dt):
    return FlowConfig(eps=0.1, dt=dt, end_time=0.02, refinement=2,
                      enforce_gate=False)


def test_stability_identical_traces():
    tr = run(polygon_circle(48), small_config(2e-3))
    rep = stability_certificate(tr, tr, 0.02, constant=0.0)
    assert rep.measured == pytest.approx(0.0, abs=1e-12)
    assert rep.initial_distance == pytest.approx(0.0, abs=1e-12)
    assert rep.passed


def test_stability_distance_shrinks_with_step():
    V0 = polygon_circle(48)
    fine = run(V0, small_config(5e-4))
    mid = run(V0, small_config(2e-3))
    coarse = run(V0, small_config(4e-3))
    d_coarse = stability_certificate(coarse, fine, 0.02).measured
    d_mid = stability_certificate(mid, fine, 0.02).measured
    assert d_mid < d_coarse
    assert d_coarse < 0.05


def test_stability_report_without_constant_has_no_verdict():
    V0 = polygon_circle(48)
    a = run(V0, small_config(2e-3))
    b = run(V0, small_config(1e-3))
    rep = stability_certificate(a, b, 0.02)
    assert rep.passed is None and rep.bound is None
    assert rep.step == pytest.approx(2e-3)


def test_stability_jittered_start_stays_comparable():
    rng = np.random.default_rng(9)
    V0 = polygon_circle(48)
    W0 = polygon_circle(48, jitter=1e-3 * rng.normal(size=(48, 2)))
    a = run(V0, small_config(2e-3))
    b = run(W0, small_config(2e-3))
    rep = stability_certificate(a, b, 0.02)
    assert rep.initial_distance > 0.0
    # fixed eps: the terminal distance stays a bounded multiple of the
    # initial one (the exponential in the bound is benign at this horizon)
    assert rep.measured <= 10.0 * rep.initial_distance


def test_stability_requires_matching_eps():
    V0 = polygon_circle(32)
    a = run(V0, small_config(2e-3))
    cfg = FlowConfig(eps=0.15, dt=2e-3, end_time=0.02, refinement=2,
                     enforce_gate=False)
    b = run(V0, cfg)
    with pytest.raises(ConfigError):
        stability_certificate(a, b, 0.02)
