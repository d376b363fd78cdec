"""Primal-dual solver for the relaxed obstacle least-gradient problem.

The discrete relaxed problem is

    minimize   J(u) = sum_{x in S} h^2 phi(x, grad u(x))
    subject to u >= psi on the interior,  u = f on the exterior,

where S is the set of cells whose forward-difference stencil touches the
interior. Jumps between interior values and the exterior datum are therefore
charged by the same stencil, which is the discrete form of the boundary
fidelity term.

For any T with phi^0(x, T) <= 1 on S the Lagrangian gives the lower bound

    J(u) >= -h^2 <div T, u>_interior - h^2 <div T, f>_exterior,

which is minimized over the box ``ProblemSpec.value_bounds`` in closed form.
The dual iterate of the primal-dual scheme is the certificate field T.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigError, InputError, NumericalDivergenceError
from .grid import div, edge_masks, interface_edges, relaxed_grad, relaxed_tv
from .metric import MetricKind, ellipse_cell

log = logging.getLogger(__name__)

GRAD_NORM_SQ = 8.0  # ||grad||^2 <= 8 / h^2 for the 2-D forward stencil
PRIMAL_WEIGHT = 0.2  # tau / step; sigma = step / PRIMAL_WEIGHT
ITERS_PER_CELL = 250  # default max_iters per cell of the longer grid side


@dataclass
class SolverParams:
    """Step sizes and stopping rules.

    ``tau * sigma * 8 / h^2 <= 1`` is required. The iteration restarts from
    its running average whenever the duality gap of the better of (current,
    average) drops below ``restart_beta`` times the gap at the last restart,
    or after ``restart_period`` iterations without a restart.
    """

    tau: float
    sigma: float
    theta: float = 1.0
    max_iters: int = 3200
    tol_gap: float = 1e-6
    tol_change: float = 0.0
    check_every: int = 10
    restart_beta: float = 0.5
    restart_period: int = 2000

    @classmethod
    def for_grid(cls, grid, **overrides):
        h = grid.h
        step = h / (2.0 * math.sqrt(2.0))
        defaults = dict(
            tau=PRIMAL_WEIGHT * step,
            sigma=step / PRIMAL_WEIGHT,
            max_iters=ITERS_PER_CELL * max(grid.nx, grid.ny),
        )
        defaults.update(overrides)
        return cls(**defaults)

    def validate(self, h):
        if self.tau <= 0 or self.sigma <= 0:
            raise ConfigError("step sizes must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0, 1]")
        if self.tau * self.sigma * GRAD_NORM_SQ / h**2 > 1.0 + 1e-12:
            raise ConfigError(
                f"tau*sigma*||grad||^2 = {self.tau * self.sigma * GRAD_NORM_SQ / h**2:.4g} > 1"
            )
        if self.max_iters < 1 or self.check_every < 1:
            raise ConfigError("max_iters and check_every must be positive")
        if not 0.0 < self.restart_beta < 1.0:
            raise ConfigError("restart_beta must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Solution:
    u: np.ndarray
    T: tuple
    primal_energy: float
    dual_energy: float
    gap: float
    iters: int
    converged: bool
    history: list = field(default_factory=list, repr=False)

    @property
    def abs_gap(self):
        return self.primal_energy - self.dual_energy


def feasibility_violation(problem, u, tol=1e-12):
    """Count and size of obstacle violations ``u < psi - tol`` on the interior."""
    inner = problem.grid.interior
    short = (problem.psi - np.asarray(u))[inner]
    bad = short > tol
    return int(bad.sum()), float(short.max(initial=0.0))


def primal_energy(problem, u, tol=1e-12):
    """Relaxed energy of ``u`` (exterior values are taken from f).

    Infeasible fields return ``inf``; the violation is logged.
    """
    count, worst = feasibility_violation(problem, u, tol)
    if count:
        log.warning("primal_energy: u < psi at %d cells (worst %.3g)", count, worst)
        return math.inf
    return relaxed_tv(problem.extend(u), problem.grid, problem.metric)


class _DualBall:
    """Per-cell dual constraint set for the restricted stencil.

    Cells with both differences live use phi^0(x, T) <= 1. A cell with a
    single live difference along e_k only sees T_k, whose admissible range is
    the shadow of the dual ball on that axis, |T_k| <= phi(x, e_k).
    """

    def __init__(self, problem):
        self.metric = problem.metric
        self.mx, self.my = edge_masks(problem.grid)
        self.both = self.mx & self.my
        self.only_x = self.mx & ~self.my
        self.only_y = self.my & ~self.mx
        self.cap_x = self.metric.axis_norm(0)
        self.cap_y = self.metric.axis_norm(1)

    def mask(self, tx, ty):
        return np.where(self.mx, tx, 0.0), np.where(self.my, ty, 0.0)

    def project(self, px, py):
        qx, qy = self.metric.project(px, py)
        qx = np.where(self.only_x, np.clip(px, -self.cap_x, self.cap_x), qx)
        qy = np.where(self.only_y, np.clip(py, -self.cap_y, self.cap_y), qy)
        qx[~self.mx] = 0.0
        qy[~self.my] = 0.0
        return qx, qy

    def excess(self, tx, ty):
        """Cellwise violation of the constraint (<= 0 when feasible)."""
        ex = self.metric.dual_norm(tx, ty) - 1.0
        ex = np.where(self.only_x, np.abs(tx) / self.cap_x - 1.0, ex)
        ex = np.where(self.only_y, np.abs(ty) / self.cap_y - 1.0, ex)
        return np.where(self.mx | self.my, ex, -1.0)


def dual_infeasibility(problem, T, ball=None):
    ball = ball or _DualBall(problem)
    tx, ty = ball.mask(*T)
    return float(max(0.0, ball.excess(tx, ty).max()))


def dual_energy(problem, T, bounded=True, tol=1e-9, tol_div=None, ball=None):
    """Lower bound on the relaxed minimum certified by the field ``T``.

    With ``bounded=True`` (used for duality gaps) the inner minimization over
    u runs over the box from ``value_bounds``, so the value is finite for any
    dual-feasible T. With ``bounded=False`` the closed form over the cone
    u >= psi is returned, which is ``-inf`` unless div T <= tol_div on the
    interior. A T violating the dual constraint by more than ``tol`` yields
    ``-inf``.
    """
    grid = problem.grid
    h = grid.h
    ball = ball or _DualBall(problem)
    tx, ty = ball.mask(*T)
    if ball.excess(tx, ty).max() > tol:
        return -math.inf
    d = div(tx, ty, h)
    inner = grid.interior
    ext = grid.exterior
    exterior_part = -h * h * float(np.sum(d[ext] * problem.f[ext]))
    c = -h * h * d[inner]
    if bounded:
        lo, hi = problem.value_bounds()
        return float(np.sum(np.minimum(c * lo[inner], c * hi))) + exterior_part
    if tol_div is None:
        tol_div = 1e-6 * max(float(np.max(np.abs(tx))), float(np.max(np.abs(ty))), 1e-300) / h
    if d[inner].max() > tol_div:
        return -math.inf
    return float(np.sum(c * problem.psi[inner])) + exterior_part


def relative_gap(primal, dual, floor=1e-300):
    """Duality gap relative to max(|primal|, |dual|, floor)."""
    gap = primal - dual
    if not math.isfinite(gap):
        return math.inf
    if gap <= 0.0:
        return 0.0
    return gap / max(abs(primal), abs(dual), floor)


def energy_floor(problem):
    """Energy scale below which a gap is roundoff.

    When the minimum is zero the primal energy is summed roundoff and a purely
    relative gap never shrinks. The floor is 1e-6 of the largest data
    magnitude times the side length of the grid box, which stays well above
    the summation error of the energy at any tolerance down to 1e-8.
    """
    grid = problem.grid
    psi = problem.psi[grid.interior & (problem.psi > -problem.big)]
    mag = max(float(np.max(np.abs(problem.f))), float(np.max(np.abs(psi), initial=0.0)))
    return max(1e-6 * mag * (grid.nx + grid.ny) * grid.h, 1e-300)


_KIND_CODE = {MetricKind.EUCLIDEAN: 0, MetricKind.ELL1: 1, MetricKind.RIEMANNIAN: 2}


@numba.njit(cache=True)
def _iterate(n, u, ubar, px, py, su, spx, spy, psi, f, inner, mx, my, cap_x, cap_y, kind, w, table, tau, sigma, theta, h):
    """Run ``n`` primal-dual steps in place and return the last max |u_new - u|.

    The dual step projects cells with both differences live onto the metric
    dual ball and clamps single-axis cells to their axis range; dead
    components are zero.
    """
    ny, nx = u.shape
    change = 0.0
    for _ in range(n):
        for r in range(ny):
            for c in range(nx):
                qx = px[r, c]
                qy = py[r, c]
                if mx[r, c]:
                    qx += sigma * (ubar[r, c + 1] - ubar[r, c]) / h
                if my[r, c]:
                    qy += sigma * (ubar[r + 1, c] - ubar[r, c]) / h
                if mx[r, c] and my[r, c]:
                    if kind == 0:
                        s = max(1.0, math.hypot(qx, qy) / w[r, c])
                        qx /= s
                        qy /= s
                    elif kind == 1:
                        qx = min(max(qx, -w[r, c]), w[r, c])
                        qy = min(max(qy, -w[r, c]), w[r, c])
                    else:
                        t = table[r, c]
                        qx, qy = ellipse_cell(qx, qy, t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7], t[8])
                    px[r, c] = qx
                    py[r, c] = qy
                elif mx[r, c]:
                    px[r, c] = min(max(qx, -cap_x[r, c]), cap_x[r, c])
                    py[r, c] = 0.0
                elif my[r, c]:
                    px[r, c] = 0.0
                    py[r, c] = min(max(qy, -cap_y[r, c]), cap_y[r, c])
                else:
                    px[r, c] = 0.0
                    py[r, c] = 0.0
        change = 0.0
        for r in range(ny):
            for c in range(nx):
                if inner[r, c]:
                    d = 0.0
                    if c < nx - 1:
                        d += px[r, c]
                    if c > 0:
                        d -= px[r, c - 1]
                    if r < ny - 1:
                        d += py[r, c]
                    if r > 0:
                        d -= py[r - 1, c]
                    v = u[r, c] + tau * d / h
                    if v < psi[r, c]:
                        v = psi[r, c]
                else:
                    v = f[r, c]
                dv = v - u[r, c]
                if not abs(dv) <= change:
                    change = abs(dv)  # also picks up nan
                ubar[r, c] = v + theta * dv
                u[r, c] = v
                su[r, c] += v
                spx[r, c] += px[r, c]
                spy[r, c] += py[r, c]
    return change


def _kernel_args(problem, params, ball):
    """Arguments of ``_iterate`` after the iterates, as contiguous arrays."""
    grid = problem.grid
    kind = _KIND_CODE[problem.metric.kind]
    if kind == 2:
        w, table = np.zeros((1, 1)), problem.metric.dual_table
    else:
        w, table = np.broadcast_to(problem.metric.weight, grid.shape), np.zeros((1, 1, 9))

    def dense(a):
        return np.ascontiguousarray(np.broadcast_to(a, grid.shape), dtype=float)

    return (
        dense(problem.psi),
        dense(problem.f),
        grid.interior,
        ball.mx,
        ball.my,
        dense(ball.cap_x),
        dense(ball.cap_y),
        kind,
        np.ascontiguousarray(w, dtype=float),
        np.ascontiguousarray(table, dtype=float),
        params.tau,
        params.sigma,
        params.theta,
        grid.h,
    )


def solve_relaxed(problem, params=None, u0=None, callback=None):
    """Restarted Chambolle-Pock iteration for the relaxed problem.

    Each step does dual ascent ``p <- proj(p + sigma grad ubar)``, primal
    descent ``u <- max(psi, u + tau div p)`` on the interior with u pinned to
    f outside, and extrapolation ``ubar = u + theta (u - u_prev)``.
    """
    grid = problem.grid
    h = grid.h
    if params is None:
        params = SolverParams.for_grid(grid)
    params.validate(h)
    ball = _DualBall(problem)
    inner = grid.interior
    psi = problem.psi
    f = problem.f
    floor = energy_floor(problem)

    def gap_of(u, px, py):
        P = primal_energy(problem, u)
        D = dual_energy(problem, (px, py), ball=ball)
        return P, D, relative_gap(P, D, floor)

    u = problem.extend(problem.f if u0 is None else u0)
    u[inner] = np.maximum(u[inner], psi[inner])
    ubar = u.copy()
    px = np.zeros(grid.shape)
    py = np.zeros(grid.shape)
    sum_u, sum_px, sum_py = np.zeros_like(u), np.zeros_like(u), np.zeros_like(u)
    n_avg = 0
    gap_at_restart = math.inf
    best = (u.copy(), px.copy(), py.copy(), *gap_of(u, px, py))
    history = [(0, best[5])]
    scale = max(1.0, float(np.ptp(f[grid.boundary])))
    converged = best[5] <= params.tol_gap
    k = 0
    static = _kernel_args(problem, params, ball)
    while not converged and k < params.max_iters:
        n = min(params.check_every - k % params.check_every, params.max_iters - k)
        change = _iterate(n, u, ubar, px, py, sum_u, sum_px, sum_py, *static)
        k += n
        n_avg += n
        if not (math.isfinite(change) and np.all(np.isfinite(px)) and np.all(np.isfinite(py))):
            raise NumericalDivergenceError(k)
        cur = (u.copy(), px.copy(), py.copy(), *gap_of(u, px, py))
        avg_fields = (sum_u / n_avg, sum_px / n_avg, sum_py / n_avg)
        avg = (*avg_fields, *gap_of(*avg_fields))
        cand = avg if avg[5] < cur[5] else cur
        if cand[5] <= best[5]:
            best = cand
        history.append((k, cand[5]))
        if callback is not None:
            callback(k, cand[0], (cand[1], cand[2]), cand[3], cand[4])
        if cand[5] <= params.tol_gap:
            converged = True
            break
        abs_gap = cand[3] - cand[4]
        if abs_gap <= params.restart_beta * gap_at_restart or n_avg >= params.restart_period:
            u, px, py = cand[0].copy(), cand[1].copy(), cand[2].copy()
            ubar = u.copy()
            sum_u[:] = 0.0
            sum_px[:] = 0.0
            sum_py[:] = 0.0
            n_avg = 0
            gap_at_restart = abs_gap
        if params.tol_change > 0 and change <= params.tol_change * scale:
            break
    u, px, py, P, D, rel = best
    if not converged:
        log.info("solve_relaxed: stopped after %d iterations, relative gap %.3g", k, rel)
    return Solution(
        u=np.array(u),
        T=(np.array(px), np.array(py)),
        primal_energy=P,
        dual_energy=D,
        gap=rel,
        iters=k,
        converged=converged,
        history=history,
    )


# -- certificate -------------------------------------------------------------


@dataclass(frozen=True)
class CertificateReport:
    max_dual_infeasibility: float
    max_positive_divergence: float
    max_divergence_off_contact: float
    max_calibration_residual: float
    boundary_consistency_residual: float
    contact_fraction: float

    THRESHOLDS = {
        "max_dual_infeasibility": 1e-6,
        "max_positive_divergence": 1e-3,
        "max_divergence_off_contact": 1e-3,
        "max_calibration_residual": 1e-2,
        "boundary_consistency_residual": 1e-2,
    }

    def failures(self, thresholds=None):
        limits = dict(self.THRESHOLDS)
        limits.update(thresholds or {})
        return [k for k, lim in limits.items() if not getattr(self, k) <= lim]

    def passed(self, thresholds=None):
        return not self.failures(thresholds)

    def as_lines(self):
        return [f"{k}={getattr(self, k):.6e}" for k in self.__dataclass_fields__]


def contact_tolerance(problem, u):
    inner = problem.grid.interior
    spread = float(np.ptp(np.asarray(u)[inner]))
    return 1e-3 * (spread if spread > 0 else max(1.0, float(np.max(np.abs(u)))))


def extract_certificate(problem, solution, tol_contact=None, grad_floor_rel=0.1):
    """Residuals of the structure conditions for the pair (u, T).

    (a) dual infeasibility (phi^0(T) - 1)_+ on the stencil support, with the
        axis bound on cells that have a single live difference;
    (b) positive divergence (div T)_+ h on the interior;
    (c) |div T| h on the interior off the contact set {u <= psi + tol_contact};
    (d) calibration |phi(g) - T.g| / |g| for the restricted gradient g on cells whose
        gradient is at least ``grad_floor_rel`` times the largest one;
    (e) trace consistency |phi(nu) sign(f - u) - T.nu| on interface edges with
        a jump, off contact, where the jump is the only difference in the
        stencil cell (any edge for the separable ell1 family).
    """
    grid, metric = problem.grid, problem.metric
    h = grid.h
    u = problem.extend(solution.u)
    ball = _DualBall(problem)
    tx, ty = ball.mask(*solution.T)
    inner = grid.interior
    supp = grid.support
    if tol_contact is None:
        tol_contact = contact_tolerance(problem, u)

    a = dual_infeasibility(problem, (tx, ty), ball)
    d = div(tx, ty, h)
    b = float(np.maximum(d[inner], 0.0).max(initial=0.0) * h)
    free = inner & (u > problem.psi + tol_contact)
    c = float(np.abs(d[free]).max(initial=0.0) * h)

    gx, gy = relaxed_grad(u, grid)
    mag = np.hypot(gx, gy)
    eps_grad = 1e-12 * max(1.0, float(np.max(np.abs(u)))) / h
    gmax = float(mag[supp].max(initial=0.0))
    strong = supp & (mag >= max(eps_grad, grad_floor_rel * gmax)) & (mag > 0)
    if strong.any():
        resid = np.abs(metric.norm(gx, gy) - (tx * gx + ty * gy)) / np.where(strong, mag, 1.0)
        dres = float(resid[strong].max())
    else:
        dres = 0.0

    e = interface_edges(grid)
    org = e["origin"]
    jump = problem.f[e["outer"]] - u[e["inner"]]
    off_contact = u[e["inner"]] > problem.psi[e["inner"]] + tol_contact
    along = np.where(e["axis"] == 0, gx[org], gy[org])
    across = np.where(e["axis"] == 0, gy[org], gx[org])
    use = (np.abs(jump) > tol_contact) & off_contact
    if metric.kind is not MetricKind.ELL1:
        use &= np.abs(across) <= 1e-3 * np.abs(along)
    if use.any():
        phin = np.where(e["axis"] == 0, metric.axis_norm(0)[org], metric.axis_norm(1)[org])
        tnu = np.where(e["axis"] == 0, tx[org], ty[org]) * e["sign"]
        eres = float(np.abs(phin * np.sign(jump) - tnu)[use].max())
    else:
        eres = 0.0

    contact = inner & ~free
    return CertificateReport(
        max_dual_infeasibility=a,
        max_positive_divergence=b,
        max_divergence_off_contact=c,
        max_calibration_residual=dres,
        boundary_consistency_residual=eres,
        contact_fraction=float(contact.sum() / inner.sum()),
    )


def check_minimality_spotcheck(problem, solution, candidates, tol=None):
    """Compare the relaxed energy of ``solution.u`` with feasible candidates.

    The solution's energy is within its absolute duality gap of the optimum,
    so every feasible candidate must satisfy margin >= -tol with tol at
    least that gap.
    """
    base = primal_energy(problem, solution.u)
    if tol is None:
        tol = max(solution.abs_gap, 0.0) + 1e-12 * max(1.0, abs(base))
    margins, skipped = [], []
    ext = problem.grid.exterior
    for i, cand in enumerate(candidates):
        cand = np.asarray(cand, dtype=float)
        if cand.shape != problem.grid.shape:
            raise InputError(f"candidate {i} has wrong shape")
        if feasibility_violation(problem, cand)[0] or not np.allclose(cand[ext], problem.f[ext]):
            skipped.append(i)
            continue
        margins.append(primal_energy(problem, cand) - base)
    return {
        "energy": base,
        "margins": margins,
        "skipped": skipped,
        "tol": tol,
        "passed": all(m >= -tol for m in margins),
    }
