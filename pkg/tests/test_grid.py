import itertools

import numpy as np
import pytest

from lgo.errors import InputError
from lgo.grid import (
    Cell,
    Grid2,
    ProblemSpec,
    boundary_term,
    div,
    grad,
    interface_edges,
    mask_signed_distance,
    perimeter_phi,
    relaxed_tv,
    tv_phi,
)
from lgo.metric import MetricField
from lgo.problems import disk_grid, square_grid


def box_grid(n=8, pad=1, h=1.0):
    mask = np.zeros((n + 2 * pad, n + 2 * pad), dtype=bool)
    mask[pad : pad + n, pad : pad + n] = True
    return Grid2.from_mask(mask, h)


def metric_family(shape, rng):
    a = rng.uniform(0.5, 2.0, shape)
    return [
        MetricField.euclidean(a),
        MetricField.ell1(a),
        MetricField.riemannian(np.array([[2.0, -0.7], [-0.7, 1.0]]), shape),
    ]


# -- grad / div ---------------------------------------------------------------------


def test_grad_of_constant_is_zero():
    gx, gy = grad(np.full((5, 7), 3.2), 0.1)
    assert not gx.any() and not gy.any()


def test_grad_of_ramp():
    h = 0.25
    u = np.tile(np.arange(6) * h, (4, 1))  # u = x along axis 1
    gx, gy = grad(u, h)
    np.testing.assert_allclose(gx[:, :-1], 1.0)
    assert not gx[:, -1].any()  # zero difference at the far edge
    assert not gy.any()


def test_grad_of_delta_touches_four_components():
    u = np.zeros((3, 3))
    u[1, 1] = 1.0
    gx, gy = grad(u, 1.0)
    comps = np.concatenate([gx.ravel(), gy.ravel()])
    assert np.count_nonzero(comps) == 4
    assert sorted(comps[comps != 0]) == [-1.0, -1.0, 1.0, 1.0]
    assert gx[1, 0] == 1.0 and gx[1, 1] == -1.0 and gy[0, 1] == 1.0 and gy[1, 1] == -1.0


def test_div_of_constant_field_vanishes_inside():
    d = div(np.full((6, 6), 2.0), np.full((6, 6), -1.0), 0.5)
    assert not d[1:-1, 1:-1].any()


def test_div_of_ramp_gradient_vanishes_inside():
    h = 0.1
    u = np.tile(np.arange(8) * h, (8, 1))
    d = div(*grad(u, h), h)
    np.testing.assert_allclose(d[1:-1, 1:-1], 0.0, atol=1e-12)


def test_grad_div_adjointness():
    rng = np.random.default_rng(0)
    for _ in range(32):
        shape = tuple(rng.integers(2, 20, 2))
        h = rng.uniform(0.01, 1.0)
        u = rng.normal(size=shape)
        px, py = rng.normal(size=shape), rng.normal(size=shape)
        gx, gy = grad(u, h)
        lhs = np.sum(gx * px + gy * py) + np.sum(u * div(px, py, h))
        scale = np.linalg.norm(u) * np.hypot(np.linalg.norm(px), np.linalg.norm(py)) / h
        assert abs(lhs) <= 1e-12 * scale


# -- energies ----------------------------------------------------------------------


def test_tv_of_constant_is_zero():
    g = square_grid(16)
    m = MetricField.euclidean(1.0, g.shape)
    assert tv_phi(np.full(g.shape, 4.0), g, m) == 0.0


@pytest.mark.parametrize("kind", ["euclidean", "ell1"])
def test_tv_of_half_indicator_is_interface_length(kind):
    g = square_grid(64)
    m = getattr(MetricField, kind)(1.0, g.shape)
    X, _ = g.centers()
    u = (X > 0.5).astype(float)
    assert tv_phi(u, g, m, g.interior) == pytest.approx(1.0, abs=2 * g.h)


def test_tv_is_homogeneous():
    rng = np.random.default_rng(1)
    g = box_grid(6)
    for m in metric_family(g.shape, rng):
        u = rng.normal(size=g.shape)
        assert tv_phi(3.5 * u, g, m) == pytest.approx(3.5 * tv_phi(u, g, m), rel=1e-12)
        assert tv_phi(-u, g, m) == pytest.approx(tv_phi(u, g, m), rel=1e-12)


def test_tv_matches_weighted_discrete_tv():
    rng = np.random.default_rng(2)
    g = box_grid(6)
    a = rng.uniform(0.5, 2.0, g.shape)
    u = rng.normal(size=g.shape)
    gx, gy = grad(u, g.h)
    expected = np.sum(a * np.hypot(gx, gy)) * g.h**2
    assert tv_phi(u, g, MetricField.euclidean(a)) == pytest.approx(expected, rel=1e-13)


def test_perimeter_examples():
    g = box_grid(10, pad=2)
    m = MetricField.ell1(1.0, g.shape)
    assert perimeter_phi(np.zeros(g.shape, dtype=int), g, m) == 0.0
    for k in (1, 3, 5):
        E = np.zeros(g.shape, dtype=int)
        E[4 : 4 + k, 3 : 3 + k] = 1
        assert perimeter_phi(E, g, m) == pytest.approx(4 * k)


def test_perimeter_rejects_non_binary():
    g = box_grid(4)
    with pytest.raises(InputError):
        perimeter_phi(np.full(g.shape, 0.5), g, MetricField.ell1(1.0, g.shape))


def test_perimeter_submodularity():
    rng = np.random.default_rng(3)
    g = box_grid(8, pad=1)
    for m in metric_family(g.shape, rng):
        for _ in range(100):
            A = rng.random(g.shape) < 0.5
            B = rng.random(g.shape) < 0.5
            P = lambda E: perimeter_phi(E.astype(int), g, m)  # noqa: E731
            assert P(A | B) + P(A & B) <= P(A) + P(B) + 1e-12


def test_coarea_identity_for_ell1():
    rng = np.random.default_rng(4)
    g = box_grid(8)
    m = MetricField.ell1(rng.uniform(0.5, 2.0, g.shape))
    levels = np.array([-1.0, 0.25, 0.5, 2.0, 3.5])
    for _ in range(20):
        u = rng.choice(levels, size=g.shape)
        layered = sum(
            (t1 - t0) * perimeter_phi((u > t0).astype(int), g, m) for t0, t1 in zip(levels[:-1], levels[1:])
        )
        assert tv_phi(u, g, m) == pytest.approx(layered, abs=1e-10)


def test_coarea_is_an_upper_bound_for_round_norms():
    # the forward-difference energy couples the two axes, so the layer sum
    # dominates it; it is an identity when each cell varies along one axis
    rng = np.random.default_rng(5)
    g = box_grid(8)
    levels = np.array([0.0, 1.0, 2.0, 4.0])
    for m in metric_family(g.shape, rng)[::2]:
        for _ in range(20):
            u = rng.choice(levels, size=g.shape)
            layered = sum(
                (t1 - t0) * perimeter_phi((u > t0).astype(int), g, m) for t0, t1 in zip(levels[:-1], levels[1:])
            )
            assert tv_phi(u, g, m) <= layered + 1e-10
        stripes = np.tile(rng.choice(levels, size=g.nx), (g.ny, 1))
        layered = sum(
            (t1 - t0) * perimeter_phi((stripes > t0).astype(int), g, m) for t0, t1 in zip(levels[:-1], levels[1:])
        )
        assert tv_phi(stripes, g, m) == pytest.approx(layered, abs=1e-10)


# -- boundary term -------------------------------------------------------------------


def test_boundary_term_zero_when_traces_match():
    g = square_grid(16)
    m = MetricField.euclidean(1.0, g.shape)
    f = np.full(g.shape, 2.5)
    u = np.where(g.interior, 2.5, np.random.default_rng(6).normal(size=g.shape))
    assert boundary_term(u, f, g, m) == 0.0


def test_boundary_term_counts_interface_length():
    g = square_grid(64)
    m = MetricField.euclidean(1.0, g.shape)
    f = np.zeros(g.shape)
    u = np.where(g.interior, 1.0, 0.0)
    assert boundary_term(u, f, g, m) == pytest.approx(4.0, abs=2 * g.h)


def test_boundary_term_single_edge():
    mask = np.zeros((3, 3), dtype=bool)
    mask[1, 1] = True
    g = Grid2.from_mask(mask, 0.5)
    m = MetricField.ell1(2.0, g.shape)
    u = np.full(g.shape, 1.0)
    f = u.copy()
    f[1, 2] = 4.0  # one interface edge with |u - f| = 3
    assert boundary_term(u, f, g, m) == pytest.approx(3.0)


def test_boundary_term_vanishes_iff_traces_match():
    rng = np.random.default_rng(7)
    g = box_grid(5)
    m = MetricField.euclidean(1.0, g.shape)
    e = interface_edges(g)
    for _ in range(20):
        f = rng.integers(0, 3, g.shape).astype(float)
        u = rng.integers(0, 3, g.shape).astype(float)
        match = np.all(u[e["inner"]] == f[e["outer"]])
        assert (boundary_term(u, f, g, m) == 0.0) == match


def test_interface_edges_orientation():
    g = box_grid(3, pad=1)
    e = interface_edges(g)
    assert len(e["axis"]) == 12
    for k in range(12):
        inner = np.array([e["inner"][0][k], e["inner"][1][k]])
        outer = np.array([e["outer"][0][k], e["outer"][1][k]])
        step = outer - inner  # (drow, dcol)
        along = step[1] if e["axis"][k] == 0 else step[0]
        assert along == e["sign"][k]
        assert g.interior[tuple(inner)] and not g.interior[tuple(outer)]


def test_relaxed_energy_splits_for_ell1():
    rng = np.random.default_rng(8)
    g = box_grid(6, pad=2)
    m = MetricField.ell1(rng.uniform(0.5, 2.0, g.shape))
    inner = g.interior
    for _ in range(10):
        u = rng.normal(size=g.shape)
        gx, gy = grad(u, g.h)
        both_x = np.zeros(g.shape, dtype=bool)
        both_y = np.zeros(g.shape, dtype=bool)
        both_x[:, :-1] = inner[:, :-1] & inner[:, 1:]
        both_y[:-1] = inner[:-1] & inner[1:]
        interior_tv = np.sum(m.weight * (np.abs(gx) * both_x + np.abs(gy) * both_y)) * g.h**2
        expected = interior_tv + boundary_term(u, u, g, m)
        assert relaxed_tv(u, g, m) == pytest.approx(expected, rel=1e-12)


# -- grids and problems ------------------------------------------------------------------


def test_labels_and_support():
    g = box_grid(3, pad=2)
    assert g.interior.sum() == 9
    assert g.boundary.sum() == 12
    assert np.all(g.labels[g.boundary] == Cell.BOUNDARY)
    # the support adds the left and lower neighbours (forward stencil)
    assert g.support.sum() == 9 + 6
    assert g.area == pytest.approx(9.0)


def test_grid_validation():
    with pytest.raises(InputError):
        Grid2.from_mask(np.ones((4, 4), dtype=bool), 1.0)
    two = np.zeros((6, 6), dtype=bool)
    two[1, 1] = two[4, 4] = True
    with pytest.raises(InputError):
        Grid2.from_mask(two, 1.0)
    with pytest.raises(InputError):
        Grid2.from_mask(np.zeros((4, 4), dtype=bool), 1.0)
    one = np.zeros((3, 3), dtype=bool)
    one[1, 1] = True
    with pytest.raises(InputError):
        Grid2.from_mask(one, 1.0, signed_distance=-np.ones((3, 3)))
    with pytest.raises(InputError):
        Grid2.from_mask(one, -1.0)


def test_signed_distance_sign_and_slope():
    for g in (disk_grid(64), square_grid(64), disk_grid(32, radius=0.37)):
        d = g.signed_distance
        assert np.all((d > 0) == g.interior)
        gy, gx = np.gradient(d, g.h)
        near = np.abs(d) <= 3 * g.h
        # away from the square's corners, where d has a kink
        X, Y = g.centers()
        smooth = near & ~((np.abs(X - 0.5) > 0.4) & (np.abs(Y - 0.5) > 0.4))
        assert np.all(np.abs(np.hypot(gx, gy)[smooth] - 1) <= 0.1)


def test_mask_distance_is_first_order_accurate():
    g = disk_grid(64)
    d = mask_signed_distance(g.interior, g.h)
    assert np.all((d > 0) == g.interior)
    near = np.abs(g.signed_distance) <= 3 * g.h
    assert np.abs(d - g.signed_distance)[near].max() <= g.h
    gy, gx = np.gradient(d, g.h)
    assert np.median(np.abs(np.hypot(gx, gy)[near] - 1)) <= 0.1


def test_problem_compatibility_and_big():
    g = box_grid(4)
    m = MetricField.euclidean(1.0, g.shape)
    f = np.zeros(g.shape)
    psi = np.full(g.shape, -np.inf)
    p = ProblemSpec(g, m, psi, f)
    assert p.big == pytest.approx(1e12)
    assert np.all(p.psi == -p.big) and not p.has_obstacle
    bad = psi.copy()
    bad[3, 3] = 1.0
    with pytest.raises(InputError, match="compatibility"):
        ProblemSpec(g, m, bad, f)
    with pytest.raises(InputError):
        ProblemSpec(g, m, psi, np.full(g.shape, np.nan))
    with pytest.raises(InputError):
        ProblemSpec(g, m, psi[:-1], f[:-1])


def test_extend_pins_exterior():
    g = box_grid(4)
    m = MetricField.euclidean(1.0, g.shape)
    f = np.arange(g.shape[0] * g.shape[1], dtype=float).reshape(g.shape)
    p = ProblemSpec(g, m, np.full(g.shape, -np.inf), f)
    u = p.extend(np.zeros(g.shape))
    assert np.all(u[g.exterior] == f[g.exterior]) and not u[g.interior].any()


def test_value_bounds_contain_truncations():
    g = box_grid(4)
    m = MetricField.euclidean(1.0, g.shape)
    f = np.where(g.interior, 5.0, np.linspace(-1, 2, g.shape[1])[None, :] * np.ones(g.shape))
    psi = np.where(g.interior, 1.5, -np.inf)
    lo, hi = ProblemSpec(g, m, psi, f).value_bounds()
    assert np.all(lo[g.interior] == 1.5)
    assert hi == pytest.approx(2.0)


def test_enumerated_submodularity_of_stencil_terms():
    # each cell contributes phi(b - a, c - a); submodular on {0,1}^3 for every norm
    rng = np.random.default_rng(9)
    for m in metric_family((1, 1), rng):
        def term(a, b, c):
            return float(m.norm(np.array(b - a, float), np.array(c - a, float), (0, 0)))

        for x, y in itertools.product(itertools.product((0, 1), repeat=3), repeat=2):
            hi = tuple(max(p, q) for p, q in zip(x, y))
            lo = tuple(min(p, q) for p, q in zip(x, y))
            assert term(*hi) + term(*lo) <= term(*x) + term(*y) + 1e-12
