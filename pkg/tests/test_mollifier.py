"""Smoothing kernel and regularized curvature: unit mass, equivariance,
brute-force field oracles, quadrature convergence, dissipation identity."""

import math

import numpy as np
import pytest

from varimcf.errors import ConfigError, GridTooCoarse
from varimcf.mollifier import (Mollifier, QuadratureGrid, SpatialHash,
                               approximate_curvature, curvature_jacobian,
                               curvature_vector_field,
                               curvature_with_jacobian, dissipation,
                               raw_curvature, smoothed_first_variation,
                               smoothed_mass)
from varimcf.varifold import (DiscreteVarifold, VectorField, first_variation,
                              grassmann_from_basis)


def random_varifold(rng, N, n=2, d=1, box=1.0):
    pos = rng.uniform(-box, box, (N, n))
    planes = np.array([grassmann_from_basis(rng.normal(size=(d, n))).projection
                       for _ in range(N)])
    return DiscreteVarifold.from_arrays(pos, planes,
                                        rng.uniform(0.5, 1.5, N), d=d)


def polygon_circle(N, R=1.0):
    th = (np.arange(N) + 0.5) / N * 2.0 * math.pi
    pts = np.stack([np.cos(th), np.sin(th)], 1) * R
    t = np.stack([-np.sin(th), np.cos(th)], 1)
    P = np.einsum("ai,aj->aij", t, t)
    m = np.full(N, 2.0 * R * math.sin(math.pi / N))
    return DiscreteVarifold.from_arrays(pts, P, m, d=1)


def rotation2(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# the kernel itself


@pytest.mark.parametrize("n,eps", [(2, 0.5), (2, 0.25), (3, 0.6)])
def test_kernel_integrates_to_one(n, eps):
    # oracle: midpoint grid sum over the support, an independent quadrature
    kern = Mollifier(eps, n)
    grid = QuadratureGrid(n, kern.support_radius, eps / 8.0)
    total = float(kern.value(grid.offsets).sum() * grid.weight)
    assert total == pytest.approx(1.0, abs=2e-3)


def test_kernel_vanishes_smoothly_at_support_boundary():
    kern = Mollifier(0.3, 2)
    edge = np.array([[kern.support_radius * (1.0 - 1e-6), 0.0]])
    assert kern.value(edge)[0] < 1e-12
    assert np.all(np.abs(kern.grad(edge)[0]) < 1e-8)
    assert np.all(np.abs(kern.hess(edge)[0]) < 1e-2)
    beyond = np.array([[kern.support_radius + 1e-9, 0.0]])
    assert kern.value(beyond)[0] == 0.0
    assert np.all(kern.hess(beyond)[0] == 0.0)


def test_kernel_is_radial_and_centered():
    kern = Mollifier(0.4, 2)
    x = np.array([[0.2, 0.1]])
    R = rotation2(1.234)
    assert kern.value((R @ x.T).T)[0] == pytest.approx(kern.value(x)[0],
                                                       rel=1e-12)
    assert np.all(kern.grad(np.zeros((1, 2)))[0] == 0.0)
    H0 = kern.hess(np.zeros((1, 2)))[0]
    assert H0[0, 0] == pytest.approx(H0[1, 1], rel=1e-12)
    assert H0[0, 1] == 0.0
    assert H0[0, 0] < 0.0  # maximum at the origin


def test_kernel_derivatives_by_finite_differences():
    kern = Mollifier(0.35, 2)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.8, 0.8, (25, 2)) * kern.support_radius / 1.2
    e = 1e-6
    for p in pts:
        g = kern.grad(p[None])[0]
        H = kern.hess(p[None])[0]
        for i in range(2):
            dp = np.zeros(2)
            dp[i] = e
            fd = (kern.value((p + dp)[None])[0]
                  - kern.value((p - dp)[None])[0]) / (2 * e)
            assert g[i] == pytest.approx(fd, abs=2e-4 * (1 + abs(fd)))
            fd2 = (kern.grad((p + dp)[None])[0]
                   - kern.grad((p - dp)[None])[0]) / (2 * e)
            assert np.allclose(H[:, i], fd2, atol=2e-3 * (1 + np.abs(fd2).max()))


def test_kernel_config_rejections():
    with pytest.raises(ConfigError):
        Mollifier(0.0, 2)
    with pytest.raises(ConfigError):
        Mollifier(0.1, 2, cutoff=0.5)


# ---------------------------------------------------------------------------
# quadrature grid and spatial hash


def test_grid_covers_the_ball_and_centers_a_node():
    grid = QuadratureGrid(2, 1.0, 0.125)
    assert grid.covered_volume >= math.pi - 1e-12
    assert np.any(np.all(grid.offsets == 0.0, axis=1))
    assert grid.node_count == len(grid.offsets)


def test_grid_refinement_guard():
    kern = Mollifier(0.2, 2)
    with pytest.raises(GridTooCoarse):
        QuadratureGrid.for_kernel(kern, 1)
    with pytest.raises(GridTooCoarse):
        approximate_curvature(polygon_circle(16), kern,
                              QuadratureGrid(2, kern.support_radius, 0.15),
                              np.zeros((1, 2)))
    with pytest.raises(ConfigError):
        approximate_curvature(polygon_circle(16), kern,
                              QuadratureGrid(2, 0.5 * kern.support_radius,
                                             0.05),
                              np.zeros((1, 2)))


def test_spatial_hash_finds_exactly_the_near_pairs():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-2.0, 2.0, (300, 2))
    queries = rng.uniform(-2.5, 2.5, (40, 2))
    radius = 0.3
    hash_ = SpatialHash(pts, radius)
    rows, cols = hash_.neighbor_pairs(queries)
    got = set(zip(rows.tolist(), cols.tolist()))
    dist = np.linalg.norm(queries[:, None, :] - pts[None, :, :], axis=2)
    for q in range(len(queries)):
        for p in range(len(pts)):
            if dist[q, p] < radius:           # must never be missed
                assert (q, p) in got
            if (q, p) in got:                 # candidates stay in one cell ring
                assert dist[q, p] <= radius * (1.0 + 2.0 * math.sqrt(2.0))


# ---------------------------------------------------------------------------
# smoothed fields against brute-force sums


def brute_mass(V, kern, pts):
    out = np.zeros(len(pts))
    for i in range(len(V)):
        out += V.masses[i] * np.array([kern.value(p - V.positions[i])
                                       for p in pts])
    return out


def brute_fvar(V, kern, pts):
    out = np.zeros((len(pts), V.n))
    for i in range(len(V)):
        for q, p in enumerate(pts):
            out[q] -= V.masses[i] * V.planes[i] @ kern.grad(p - V.positions[i])
    return out


@pytest.mark.parametrize("n,d", [(2, 1), (3, 2)])
def test_smoothed_fields_match_brute_force(n, d):
    rng = np.random.default_rng(20 + n)
    V = random_varifold(rng, 25, n=n, d=d)
    kern = Mollifier(0.3, n)
    pts = np.vstack([rng.uniform(-1.2, 1.2, (15, n)),
                     np.full((1, n), 50.0)])   # one point far off support
    mass = smoothed_mass(V, kern, pts)
    fvar = smoothed_first_variation(V, kern, pts)
    assert np.allclose(mass, brute_mass(V, kern, pts), atol=1e-12)
    assert np.allclose(fvar, brute_fvar(V, kern, pts), atol=1e-12)
    assert mass[-1] == 0.0 and np.all(fvar[-1] == 0.0)


def test_smoothed_first_variation_equals_exact_pairing():
    # component j at y equals the exact first variation along the vector
    # field x -> Phi(y - x) e_j
    rng = np.random.default_rng(23)
    V = random_varifold(rng, 12, n=2, d=1)
    kern = Mollifier(0.4, 2)
    y = np.array([0.1, -0.2])
    fv = smoothed_first_variation(V, kern, y)
    for j in range(2):
        ej = np.zeros(2)
        ej[j] = 1.0

        def value(x, ej=ej):
            x = np.atleast_2d(x)
            return kern.value(y[None, :] - x)[:, None] * ej[None, :]

        def jac(x, ej=ej):
            x = np.atleast_2d(x)
            return -np.einsum("i,qj->qij", ej, kern.grad(y[None, :] - x))

        assert first_variation(V, VectorField(value, jac)) == pytest.approx(
            fv[j], abs=1e-12)


def test_raw_curvature_quotient_definition():
    rng = np.random.default_rng(24)
    V = random_varifold(rng, 10, n=2, d=1)
    kern = Mollifier(0.3, 2)
    pts = rng.uniform(-1.0, 1.0, (8, 2))
    got = raw_curvature(V, kern, pts)
    expect = -brute_fvar(V, kern, pts) / (brute_mass(V, kern, pts)
                                          + kern.eps)[:, None]
    assert np.allclose(got, expect, atol=1e-12)


# ---------------------------------------------------------------------------
# regularized curvature


def test_lone_atom_has_zero_curvature():
    S = grassmann_from_basis([[1.0, 0.0]])
    V = DiscreteVarifold.from_arrays([[0.25, -0.4]], S.projection[None],
                                     [1.0], d=1)
    kern = Mollifier(0.2, 2)
    grid = QuadratureGrid.for_kernel(kern, 4)
    h = approximate_curvature(V, kern, grid, V.positions)
    assert np.all(np.abs(h) <= 1e-12)


def test_circle_curvature_points_inward_with_unit_magnitude():
    V = polygon_circle(100)
    kern = Mollifier(0.1, 2)
    grid = QuadratureGrid.for_kernel(kern, 2)
    h = approximate_curvature(V, kern, grid, V.positions)
    radial = V.positions / np.linalg.norm(V.positions, axis=1, keepdims=True)
    inward = -np.einsum("ai,ai->a", h, radial)
    assert np.all(inward > 0.0)
    mags = np.linalg.norm(h, axis=1)
    # exact circle curvature is 1; smoothing at eps = 0.1 biases it slightly
    assert np.all((mags > 0.85) & (mags < 1.05))
    # symmetry, up to the anisotropy of the coarse quadrature stencil
    assert float(mags.max() - mags.min()) < 1e-5


def test_curvature_equivariance():
    V = polygon_circle(64)
    kern = Mollifier(0.1, 2)
    grid = QuadratureGrid.for_kernel(kern, 2)
    probes = np.array([[1.0, 0.0], [0.95, 0.1], [0.7, 0.7]])
    h = approximate_curvature(V, kern, grid, probes)
    # translations: exact (the grid is relative to the query point)
    s = np.array([0.371, -1.2345])
    ht = approximate_curvature(V.transformed(shift=s), kern, grid, probes + s)
    assert np.allclose(ht, h, atol=1e-12)
    # quarter turn: exact, the stencil is invariant under it
    R = rotation2(math.pi / 2.0)
    hr = approximate_curvature(V.transformed(rotation=R), kern, grid,
                               (R @ probes.T).T)
    assert np.allclose(hr, (R @ h.T).T, atol=1e-12)
    # generic rotation: equal up to the quadrature error of the rotated grid
    R = rotation2(0.31)
    hr = approximate_curvature(V.transformed(rotation=R), kern, grid,
                               (R @ probes.T).T)
    assert np.allclose(hr, (R @ h.T).T, atol=1e-4)


def test_curvature_jacobian_by_finite_differences():
    V = polygon_circle(48)
    kern = Mollifier(0.15, 2)
    grid = QuadratureGrid.for_kernel(kern, 4)
    probes = np.array([[0.9, 0.05], [0.6, 0.6]])
    h, J = curvature_with_jacobian(V, kern, grid, probes)
    assert np.allclose(h, approximate_curvature(V, kern, grid, probes),
                       atol=1e-14)
    assert np.allclose(J, curvature_jacobian(V, kern, grid, probes),
                       atol=1e-14)
    e = 1e-6
    for q, p in enumerate(probes):
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = e
            fd = (approximate_curvature(V, kern, grid, (p + dp)[None])[0]
                  - approximate_curvature(V, kern, grid, (p - dp)[None])[0]) / (2 * e)
            assert np.allclose(J[q][:, j], fd, atol=5e-4)


def test_refining_the_stencil_converges_fast():
    V = polygon_circle(100)
    kern = Mollifier(0.1, 2)
    probes = np.array([[1.0, 0.0], [0.95, 0.1], [0.7, 0.7]])
    vals = {q: approximate_curvature(V, kern, QuadratureGrid.for_kernel(kern, q),
                                     probes)
            for q in (2, 4, 8)}
    d24 = float(np.max(np.abs(vals[2] - vals[4])))
    d48 = float(np.max(np.abs(vals[4] - vals[8])))
    assert d24 < 1e-4          # already 5-decimal agreement at the coarse grid
    assert d48 < d24 / 4.0     # and the refinement keeps paying off


# ---------------------------------------------------------------------------
# dissipation


def test_dissipation_identity_on_random_varifolds():
    # the exact pairing of the smoothed curvature with the varifold equals
    # minus the smoothed-field dissipation integral, up to quadrature error
    rng = np.random.default_rng(30)
    kern = Mollifier(0.15, 2)
    grid = QuadratureGrid.for_kernel(kern, 4)
    for _ in range(6):
        V = random_varifold(rng, int(rng.integers(5, 50)))
        D = dissipation(V, kern, grid)
        paired = first_variation(V, curvature_vector_field(V, kern, grid))
        assert D >= 0.0
        assert abs(paired + D) <= 1e-3 * max(1.0, D)


def test_dissipation_identity_on_circle():
    V = polygon_circle(100)
    kern = Mollifier(0.1, 2)
    grid = QuadratureGrid.for_kernel(kern, 2)
    D = dissipation(V, kern, grid)
    paired = first_variation(V, curvature_vector_field(V, kern, grid))
    assert abs(paired + D) <= 1e-3 * max(1.0, D)


def test_dissipation_guards():
    V = polygon_circle(16)
    kern = Mollifier(0.2, 2)
    with pytest.raises(GridTooCoarse):
        dissipation(V, kern, QuadratureGrid(2, kern.support_radius, 0.15))
    with pytest.raises(ConfigError):
        dissipation(V, kern, nodes=np.zeros((3, 2)))  # nodes need a spacing
    assert dissipation(DiscreteVarifold.from_arrays(
        np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0), d=1,
        validate=False), kern) == 0.0
