"""End-to-end acceptance checks at the reference resolution h = 1/64.

Each test carries the number of the criterion it belongs to; the terminal
summary prints one PASS/FAIL line per criterion.
"""
import subprocess
import sys
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from lgo import problems
from lgo.analysis import barrier_condition_check, check_comparison, check_stability, data_lipschitz, holder_modulus
from lgo.levelset import brute_levelset, solve_levelset, stack_levelsets
from lgo.solver import SolverParams, extract_certificate, solve_relaxed

from instances import fourier_datum, random_instance

pytestmark = pytest.mark.acceptance

N = 64
H = 1.0 / N
MAX_ITERS = 10_000
METRICS = ("euclidean-weighted", "ell1-weighted")
REFERENCE = [(name, metric) for name in ("constant", "step", "block") for metric in METRICS]


def _params(grid, tol=1e-5):
    return SolverParams.for_grid(grid, tol_gap=tol, max_iters=MAX_ITERS)


def _obstacle(p):
    return np.where(p.psi > -p.big, p.psi, -np.inf)


@pytest.fixture(scope="module")
def reference():
    out = {}
    for name, metric in REFERENCE:
        p = getattr(problems, f"{name}_problem")(N, metric=metric)
        start = time.perf_counter()
        s = solve_relaxed(p, _params(p.grid))
        out[name, metric] = (p, s, time.perf_counter() - start)
    return out


# -- 1. strong duality ----------------------------------------------------------------


@pytest.mark.criterion(1)
@pytest.mark.parametrize("name,metric", REFERENCE)
def test_gap_closes_within_budget(reference, name, metric):
    p, s, seconds = reference[name, metric]
    assert s.converged and s.gap <= 1e-5
    assert s.iters <= MAX_ITERS
    assert seconds <= 60.0
    assert s.primal_energy - s.dual_energy <= 1e-5 * abs(s.primal_energy) + 1e-12


# -- 2. structure certificate ---------------------------------------------------------------


@pytest.mark.criterion(2)
@pytest.mark.parametrize("name,metric", REFERENCE)
def test_certificate_residuals(reference, name, metric):
    p, s, _ = reference[name, metric]
    assert s.gap <= 1e-5
    rep = extract_certificate(p, s, grad_floor_rel=0.1)
    assert rep.max_dual_infeasibility <= 1e-6, rep.as_lines()
    assert rep.max_positive_divergence <= 1e-3, rep.as_lines()
    assert rep.max_divergence_off_contact <= 1e-3, rep.as_lines()
    assert rep.max_calibration_residual <= 1e-2, rep.as_lines()


# -- 3. min-cut oracle --------------------------------------------------------------------


@pytest.mark.criterion(3)
def test_cut_equals_enumeration_on_random_instances():
    rng = np.random.default_rng(50)
    for _ in range(50):
        p = random_instance(rng, "ell1-weighted", max_side=5)
        assert max(p.grid.nx, p.grid.ny) <= 7  # at most 5 x 5 interior plus the exterior ring
        t = float(rng.choice([0.5, 1.5, 2.5]))
        E, v = solve_levelset(p, t, 4, return_value=True)
        B, w = brute_levelset(p, t, 4, return_value=True)
        assert v == w
        assert np.array_equal(E, B)


@pytest.mark.criterion(3)
@pytest.mark.parametrize("name", ["step", "block"])
def test_stacked_levelsets_match_solver(reference, name):
    p, s, _ = reference[name, "ell1-weighted"]
    thresholds = np.linspace(0.0, 1.0, 33)
    res = stack_levelsets(p, thresholds, stencil=4)
    inner = p.grid.interior
    assert res.violations == 0
    assert np.abs(res.u - s.u)[inner].max() <= 5 * H + (thresholds[1] - thresholds[0])


# -- 4. energies ----------------------------------------------------------------------------


@pytest.mark.criterion(4)
@pytest.mark.parametrize("metric", METRICS)
@pytest.mark.parametrize("name,expected", [("step", 1.0), ("block", 0.8)])
def test_reference_energies(reference, name, expected, metric):
    _, s, _ = reference[name, metric]
    assert abs(s.primal_energy - expected) <= 5 * H


@pytest.mark.criterion(4)
@pytest.mark.parametrize("name,expected", [("step", 1.0), ("block", 0.8)])
def test_reference_energies_by_cut(name, expected):
    p = getattr(problems, f"{name}_problem")(N, metric="ell1-weighted")
    _, v = solve_levelset(p, 0.5, 4, return_value=True)
    assert abs(v - expected) <= 5 * H


# -- 5. comparison ----------------------------------------------------------------------------


@pytest.mark.criterion(5)
def test_comparison_on_random_disk_data():
    rng = np.random.default_rng(5)
    for _ in range(10):
        g1, g2 = fourier_datum(rng), fourier_datum(rng)
        shift = rng.uniform(0.05, 0.3)
        p1 = problems.disk_problem(g1, N)
        p2 = problems.disk_problem(lambda X, Y: g1(X, Y) + shift + 0.1 * (1 + np.tanh(g2(X, Y))), N)
        assert np.all(p2.f >= p1.f)
        s1 = solve_relaxed(p1, _params(p1.grid, tol=1e-4))
        s2 = solve_relaxed(p2, _params(p2.grid, tol=1e-4))
        lip = max(data_lipschitz(p1), data_lipschitz(p2))
        rep = check_comparison(p1, p2, s1, s2, tol=5 * H * lip)
        assert rep.ordered
        assert rep.order_violation <= 5 * H * lip
        assert rep.sup_solution_difference <= rep.sup_data_difference + 5 * H * lip


# -- 6. stability ---------------------------------------------------------------------------


@pytest.mark.criterion(6)
@pytest.mark.parametrize("metric", METRICS)
def test_stability_for_decreasing_obstacles(reference, metric):
    p, s, _ = reference["block", metric]
    psi = _obstacle(p)
    seq = [psi - 1.0 / k for k in (1, 2, 4, 8, 16)]
    rep = check_stability(p, seq, _params(p.grid), reference=s)
    d = rep.distances
    assert all(b <= a for a, b in zip(d[:-1], d[1:])), d
    assert d[-1] <= 10 * H * p.grid.area


# -- 7. barrier condition ----------------------------------------------------------------------


@pytest.mark.criterion(7)
def test_disk_satisfies_barrier_condition():
    rep = barrier_condition_check(problems.disk_problem(lambda X, Y: X, N))
    assert rep.verdict == "satisfied"
    assert abs(rep.min_value - 2.0) <= 0.2 * 2.0  # 1 / R with R = 1/2


@pytest.mark.criterion(7)
def test_square_does_not_satisfy_barrier_condition():
    rep = barrier_condition_check(problems.constant_problem(N))
    assert rep.verdict != "satisfied"


# -- 8. regularity ----------------------------------------------------------------------------


@pytest.mark.criterion(8)
def test_hoelder_exponent_for_rough_datum():
    # |sin theta|^(1/2) is C^{0,1/2} along the circle
    p = problems.disk_problem(lambda X, Y: np.abs(np.sin(problems.polar_angle(X, Y))) ** 0.5, N)
    s = solve_relaxed(p, _params(p.grid))
    assert holder_modulus(s.u, p.grid).exponent >= 0.15


@pytest.mark.criterion(8)
def test_hoelder_exponent_for_smooth_datum():
    p = problems.disk_problem(lambda X, Y: X**2 + Y, N)
    s = solve_relaxed(p, _params(p.grid))
    assert holder_modulus(s.u, p.grid).exponent >= 0.9


# -- 9. unit suite ----------------------------------------------------------------------------

INVARIANTS = {
    "norm axioms": ("test_metric", "test_norm_axioms"),
    "Euler identity and p.grad phi(q) <= phi(p)": ("test_metric", "test_euler_identity_and_norm_inequality"),
    "grad/div adjointness": ("test_grid", "test_grad_div_adjointness"),
    "coarea identity": ("test_grid", "test_coarea_identity_for_ell1"),
    "coarea bound": ("test_grid", "test_coarea_is_an_upper_bound_for_round_norms"),
    "perimeter submodularity": ("test_grid", "test_perimeter_submodularity"),
}


def _run_unit_suite(junit):
    tests = Path(__file__).parent
    cmd = [
        sys.executable, "-m", "pytest", str(tests), "-q", "-p", "no:cacheprovider",
        "-m", "not acceptance", f"--junitxml={junit}",
    ]
    start = time.perf_counter()
    proc = subprocess.run(cmd, cwd=tests.parent, capture_output=True, text=True)
    return proc, time.perf_counter() - start


@pytest.mark.criterion(9)
def test_unit_suite_passes_quickly(tmp_path):
    # the first run fills the numba cache; the budget applies to the warm run
    _run_unit_suite(tmp_path / "warm.xml")
    proc, seconds = _run_unit_suite(tmp_path / "unit.xml")
    assert proc.returncode == 0, proc.stdout[-2000:]
    cases = ET.parse(tmp_path / "unit.xml").getroot().iter("testcase")
    passed = {
        (c.get("classname").rsplit(".", 1)[-1], c.get("name").split("[")[0])
        for c in cases
        if not any(child.tag in ("failure", "error", "skipped") for child in c)
    }
    for label, key in INVARIANTS.items():
        assert key in passed, f"{label}: {key} did not pass"
    assert seconds <= 10.0, f"unit suite took {seconds:.1f} s"
