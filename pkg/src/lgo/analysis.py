"""Numerical checks of the qualitative theory: comparison, stability, barriers, moduli."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError
from .solver import SolverParams, solve_relaxed


def data_lipschitz(problem, ring=2):
    """Discrete Lipschitz constant of f on the exterior ring within ``ring`` cells of the domain."""
    grid = problem.grid
    near = ndimage.binary_dilation(grid.interior, iterations=ring) & grid.exterior
    f = problem.f
    best = 0.0
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        ny, nx = grid.shape
        c0, c1 = max(0, -dc), nx - max(0, dc)
        a = (slice(0, ny - dr), slice(c0, c1))
        b = (slice(dr, ny), slice(c0 + dc, c1 + dc))
        both = near[a] & near[b]
        if both.any():
            step = grid.h * math.hypot(dr, dc)
            best = max(best, float(np.abs(f[b] - f[a])[both].max()) / step)
    return best


# -- comparison ---------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    sup_data_difference: float
    sup_solution_difference: float
    excess_over_data: float
    ordered: bool
    order_violation: float
    tol: float

    @property
    def passed(self):
        ok = self.excess_over_data <= self.tol
        if self.ordered:
            ok = ok and self.order_violation <= self.tol
        return ok

    def as_lines(self):
        return [
            f"sup_data_difference={self.sup_data_difference:.6e}",
            f"sup_solution_difference={self.sup_solution_difference:.6e}",
            f"excess_over_data={self.excess_over_data:.6e}",
            f"ordered={int(self.ordered)}",
            f"order_violation={self.order_violation:.6e}",
            f"tol={self.tol:.6e}",
            f"passed={int(self.passed)}",
        ]


def _obstacle(problem):
    return np.where(problem.psi <= -problem.big, -np.inf, problem.psi)


def check_comparison(problem1, problem2, sol1, sol2, tol=None):
    """Compare two solutions whose problems differ only in the exterior datum.

    Reports the excess of sup_Omega |u1 - u2| over sup_band |f1 - f2| and,
    when f2 >= f1 on every cell, the largest order violation (u1 - u2)_+.
    The default tolerance is 5 h Lip(f).
    """
    g1, g2 = problem1.grid, problem2.grid
    if not g1.same_layout(g2):
        raise InputError("problems are defined on different grids")
    if not np.array_equal(_obstacle(problem1), _obstacle(problem2)):
        raise InputError("problems must share the obstacle")
    if problem1.metric.kind is not problem2.metric.kind:
        raise InputError("problems must share the metric")
    inner = g1.interior
    band = g1.boundary
    df = problem1.f - problem2.f
    sup_f = float(np.abs(df[band]).max(initial=0.0))
    du = np.asarray(sol1.u) - np.asarray(sol2.u)
    sup_u = float(np.abs(du[inner]).max(initial=0.0))
    ordered = bool(np.all(problem2.f >= problem1.f))
    if tol is None:
        lip = max(data_lipschitz(problem1), data_lipschitz(problem2))
        tol = 5.0 * g1.h * lip
    return ComparisonReport(
        sup_data_difference=sup_f,
        sup_solution_difference=sup_u,
        excess_over_data=max(0.0, sup_u - sup_f),
        ordered=ordered,
        order_violation=float(np.maximum(du[inner], 0.0).max(initial=0.0)) if ordered else 0.0,
        tol=float(tol),
    )


# -- stability ------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    distances: list
    monotone: bool
    tol: float
    converged: list = field(default_factory=list)

    @property
    def final(self):
        return self.distances[-1]

    @property
    def passed(self):
        return self.monotone and self.final <= self.tol

    def as_lines(self):
        lines = [f"distance[{k}]={d:.6e}" for k, d in enumerate(self.distances)]
        lines += [f"monotone={int(self.monotone)}", f"tol={self.tol:.6e}", f"passed={int(self.passed)}"]
        return lines


def check_stability(problem, obstacles, params=None, reference=None):
    """L1 distances between solutions for an increasing obstacle sequence and the limit.

    ``obstacles`` must satisfy psi_k <= psi_{k+1} <= psi cellwise on the
    interior. Distances are sum |u_k - u| h^2 over the interior.
    """
    grid = problem.grid
    inner = grid.interior
    seq = [np.asarray(p, dtype=float) for p in obstacles]
    if not seq:
        raise InputError("obstacle sequence is empty")
    chain = seq + [problem.psi]
    for lo, hi in zip(chain[:-1], chain[1:]):
        if np.any(np.maximum(lo, -problem.big)[inner] > np.maximum(hi, -problem.big)[inner]):
            raise InputError("obstacle sequence must increase towards psi")
    if params is None:
        params = SolverParams.for_grid(grid)
    if reference is None:
        reference = solve_relaxed(problem, params)
    distances, flags = [], []
    for psi_k in seq:
        sol = solve_relaxed(problem.with_data(psi=psi_k), params)
        flags.append(sol.converged)
        distances.append(float(np.abs(sol.u - reference.u)[inner].sum() * grid.h**2))
    slack = 1e-9 * grid.area
    monotone = all(b <= a + slack for a, b in zip(distances[:-1], distances[1:]))
    return StabilityReport(distances, monotone, 10.0 * grid.h * grid.area, flags)


# -- barrier condition ------------------------------------------------------------------


def first_layer(grid):
    """Interior cells with an exterior 4-neighbour."""
    inner = grid.interior
    return inner & ndimage.binary_dilation(grid.exterior, structure=ndimage.generate_binary_structure(2, 1))


def _barrier_operator(d, metric, h, rows, cols, s):
    """-div phi_xi(x, grad d) at the given cells by nested centered differences of step s cells."""

    def grad_at(r, c):
        gx = (d[r, c + s] - d[r, c - s]) / (2 * s * h)
        gy = (d[r + s, c] - d[r - s, c]) / (2 * s * h)
        return gx, gy

    def field_at(r, c):
        gx, gy = grad_at(r, c)
        return metric.norm_grad(gx, gy, (r, c))

    vx_p, _ = field_at(rows, cols + s)
    vx_m, _ = field_at(rows, cols - s)
    _, vy_p = field_at(rows + s, cols)
    _, vy_m = field_at(rows - s, cols)
    return -((vx_p - vx_m) + (vy_p - vy_m)) / (2 * s * h)


@dataclass(frozen=True)
class BarrierReport:
    values: np.ndarray
    estimates: np.ndarray
    cells: tuple
    skipped: int
    notes: list
    min_value: float
    fraction_positive: float
    fraction_negative: float
    verdict: str

    def as_lines(self):
        return [
            f"samples={self.values.size}",
            f"skipped={self.skipped}",
            f"min={self.min_value:.6e}",
            f"fraction_positive={self.fraction_positive:.6f}",
            f"fraction_negative={self.fraction_negative:.6f}",
            f"verdict={self.verdict}",
        ] + [f"note={n}" for n in self.notes]


POSITIVE_FRACTION = 0.95


def barrier_condition_check(problem, n_samples=64, seed=42):
    """Sample -div phi_xi(x, grad d) one cell inside the interface.

    Each value is classified against three times its truncation estimate
    (Richardson comparison of steps h and 2h). The verdict is "satisfied" when
    at least 95% of valid samples are positive, "fails" when more than 5% are
    negative, and "marginal" otherwise.
    """
    grid = problem.grid
    metric = problem.metric
    d = np.asarray(grid.signed_distance)
    h = grid.h
    layer = np.argwhere(first_layer(grid))
    rng = np.random.default_rng(seed)
    if n_samples < len(layer):
        pick = np.sort(rng.choice(len(layer), size=n_samples, replace=False))
        layer = layer[pick]
    rows, cols = layer[:, 0], layer[:, 1]
    notes = []
    ny, nx = grid.shape
    fits = (rows >= 4) & (rows < ny - 4) & (cols >= 4) & (cols < nx - 4)
    if not fits.all():
        notes.append(f"{int((~fits).sum())} samples too close to the grid edge")
    rows, cols = rows[fits], cols[fits]
    gx = (d[rows, cols + 1] - d[rows, cols - 1]) / (2 * h)
    gy = (d[rows + 1, cols] - d[rows - 1, cols]) / (2 * h)
    steep = np.hypot(gx, gy) >= 0.5
    if not steep.all():
        notes.append(f"{int((~steep).sum())} samples with |grad d| < 0.5")
    skipped = int((~fits).sum() + (~steep).sum())
    rows, cols = rows[steep], cols[steep]
    v1 = _barrier_operator(d, metric, h, rows, cols, 1)
    v2 = _barrier_operator(d, metric, h, rows, cols, 2)
    est = np.abs(v2 - v1) / 3.0
    if v1.size == 0:
        return BarrierReport(v1, est, (rows, cols), skipped, notes + ["no valid samples"], math.nan, 0.0, 0.0, "marginal")
    scale = float(np.median(metric.axis_norm(0)[rows, cols]))
    floor = 1e-8 * max(float(np.abs(v1).max()), scale / h)
    thr = 3.0 * est + floor
    pos = float(np.mean(v1 > thr))
    neg = float(np.mean(v1 < -thr))
    if pos >= POSITIVE_FRACTION:
        verdict = "satisfied"
    elif neg > 1.0 - POSITIVE_FRACTION:
        verdict = "fails"
    else:
        verdict = "marginal"
    return BarrierReport(v1, est, (rows, cols), skipped, notes, float(v1.min()), pos, neg, verdict)


# -- explicit barriers --------------------------------------------------------------------


def holder_seminorm(values, points, alpha):
    """max |f(x) - f(y)| / |x - y|^alpha over all pairs of the given samples."""
    values = np.asarray(values, dtype=float)
    pts = np.asarray(points, dtype=float)
    diff = np.abs(values[:, None] - values[None, :])
    dist = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    mask = dist > 0
    if not mask.any():
        return 0.0
    return float(np.max(diff[mask] / dist[mask] ** alpha))


@dataclass(frozen=True)
class BarrierSpec:
    x0: tuple
    K: float
    lam: float
    alpha: float
    delta: float
    sign: str = "upper"

    def __post_init__(self):
        if self.sign not in ("upper", "lower"):
            raise ConfigError("sign must be 'upper' or 'lower'")
        if not self.K > 0:
            raise ConfigError("K must be positive")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if not self.lam > 2 * self.delta:
            raise ConfigError(f"lambda={self.lam} must exceed 2*delta={2 * self.delta}")

    @classmethod
    def recommended(cls, problem, u, x0, alpha, delta, lam, sign="upper"):
        """Constants following the recipe K >= [f]_alpha and K delta^alpha >= |u - f(x0)|."""
        grid = problem.grid
        band = grid.boundary
        X, Y = grid.centers()
        pts = np.column_stack([X[band], Y[band]])
        f0 = _datum_at(problem, x0)
        semi = holder_seminorm(problem.f[band], pts, alpha)
        spread = float(np.abs(np.asarray(u)[grid.interior] - f0).max(initial=0.0))
        K = max(semi, spread / delta**alpha, 1e-12)
        return cls(tuple(x0), float(K), float(lam), float(alpha), float(delta), sign)


def _datum_at(problem, x0):
    grid = problem.grid
    X, Y = grid.centers()
    band = np.argwhere(grid.boundary)
    dist = np.hypot(X[grid.boundary] - x0[0], Y[grid.boundary] - x0[1])
    r, c = band[int(np.argmin(dist))]
    return float(problem.f[r, c])


@dataclass(frozen=True, eq=False)
class BarrierResult:
    w: np.ndarray
    patch: np.ndarray
    f0: float
    min_grad: float
    operator_sign_fraction: float
    rim_violation: float | None
    patch_violation: float | None
    tol: float

    @property
    def valid(self):
        ok = self.min_grad > 0 and self.operator_sign_fraction == 1.0
        if self.rim_violation is not None:
            ok = ok and self.rim_violation <= self.tol
        return ok

    def as_lines(self):
        lines = [
            f"patch_cells={int(self.patch.sum())}",
            f"f0={self.f0:.6e}",
            f"min_grad={self.min_grad:.6e}",
            f"operator_sign_fraction={self.operator_sign_fraction:.6f}",
        ]
        if self.rim_violation is not None:
            lines += [f"rim_violation={self.rim_violation:.6e}", f"patch_violation={self.patch_violation:.6e}"]
        return lines + [f"valid={int(self.valid)}"]


def build_barrier(problem, spec, u=None, tol=None):
    """Upper or lower barrier w = f(x0) +/- K v^{alpha/2}, v = |x - x0|^2 + lam d(x).

    Checks on the patch U = B(x0, delta) inside the domain: |grad w| > 0, the
    sign of div phi_xi(x, grad w) (negative for the upper barrier, positive
    for the lower one), and, when a solution ``u`` is given, the ordering
    against u on the rim of U (cells of U with a 4-neighbour outside U) and
    on all of U.
    """
    grid = problem.grid
    h = grid.h
    X, Y = grid.centers()
    x0 = spec.x0
    d = np.asarray(grid.signed_distance)
    r2 = (X - x0[0]) ** 2 + (Y - x0[1]) ** 2
    v = r2 + spec.lam * d
    patch = grid.interior & (r2 < spec.delta**2) & (v > 0)
    f0 = _datum_at(problem, x0)
    sgn = 1.0 if spec.sign == "upper" else -1.0
    w = np.full(grid.shape, np.nan)
    w[patch] = f0 + sgn * spec.K * v[patch] ** (spec.alpha / 2)
    # gradient of w = K (alpha/2) v^{alpha/2 - 1} grad v, with grad v by centered differences
    vy, vx = np.gradient(v, h)
    gmag = spec.K * spec.alpha / 2 * np.where(patch, np.abs(v), 1.0) ** (spec.alpha / 2 - 1) * np.hypot(vx, vy)
    min_grad = float(gmag[patch].min(initial=math.inf))
    # L w has the sign of sgn * div phi_xi(x, grad v) (zero-homogeneity of phi_xi)
    px, py = problem.metric.norm_grad(sgn * vx, sgn * vy)
    Lw = np.gradient(px, h, axis=1) + np.gradient(py, h, axis=0)
    want = Lw < 0 if sgn > 0 else Lw > 0
    frac = float(np.mean(want[patch])) if patch.any() else 0.0
    rim_v = patch_v = None
    if tol is None:
        tol = 5.0 * h * max(1.0, data_lipschitz(problem))
    if u is not None:
        u = np.asarray(u, dtype=float)
        outside = ~patch
        rim = patch & ndimage.binary_dilation(outside, structure=ndimage.generate_binary_structure(2, 1))
        gap = sgn * (u - w)  # > 0 means the barrier is crossed
        rim_v = float(np.maximum(gap[rim], 0.0).max(initial=0.0))
        patch_v = float(np.maximum(gap[patch], 0.0).max(initial=0.0))
    return BarrierResult(w, patch, f0, min_grad, frac, rim_v, patch_v, float(tol))


# -- Hoelder modulus ------------------------------------------------------------------------


@dataclass(frozen=True)
class ModulusReport:
    exponent: float
    constant: float
    pairs: int
    scale_range: tuple
    target: float | None = None
    slack: float = 0.1
    bins: list = field(default_factory=list)

    @property
    def meets_target(self):
        if self.target is None:
            return True
        return self.exponent >= self.target - self.slack

    def as_lines(self):
        lines = [
            f"exponent={self.exponent:.6f}",
            f"constant={self.constant:.6e}",
            f"pairs={self.pairs}",
            f"scale_min={self.scale_range[0]:.6e}",
            f"scale_max={self.scale_range[1]:.6e}",
        ]
        if self.target is not None:
            lines += [f"target={self.target:.6f}", f"meets_target={int(self.meets_target)}"]
        return lines


def _diameter(region, h):
    outline = np.argwhere(region & ~ndimage.binary_erosion(region))
    if len(outline) > 4000:
        outline = outline[:: len(outline) // 4000 + 1]
    diff = outline[:, None, :] - outline[None, :, :]
    return float(h * np.sqrt((diff**2).sum(axis=-1).max()))


def _offset_moduli(u, region, h, rmin, rmax):
    """Exact sup |u(x + o) - u(x)| over the region for every lattice offset o in the window."""
    kmax = int(math.floor(rmax / h))
    ny, nx = region.shape
    dists, omegas, pairs = [], [], 0
    for dr in range(0, kmax + 1):
        for dc in range(-kmax, kmax + 1):
            if dr == 0 and dc <= 0:
                continue  # each unordered pair once
            r = h * math.hypot(dr, dc)
            if r < rmin or r > rmax or abs(dc) >= nx or dr >= ny:
                continue
            c0, c1 = max(0, -dc), nx - max(0, dc)
            a = (slice(0, ny - dr), slice(c0, c1))
            b = (slice(dr, ny), slice(c0 + dc, c1 + dc))
            both = region[a] & region[b]
            n = int(both.sum())
            if n == 0:
                continue
            pairs += n
            dists.append(r)
            omegas.append(float(np.abs(u[b] - u[a])[both].max()))
    return np.array(dists), np.array(omegas), pairs


def holder_modulus(u, grid, region=None, target_exponent=None, n_bins=12):
    """Fit a Hoelder exponent to the modulus of continuity of ``u``.

    For every lattice offset with length in [4h, diam/4] the largest
    |u(x) - u(y)| over all pairs of region cells at that offset is computed
    exactly. Offsets are grouped in logarithmic distance bins; each bin
    contributes its largest difference together with the offset length where
    it occurs, and the exponent is the least-squares slope of log omega
    against log r.
    """
    u = np.asarray(u, dtype=float)
    region = grid.interior if region is None else np.asarray(region, dtype=bool)
    if region.sum() < 2:
        raise InputError("region needs at least two cells")
    h = grid.h
    diam = _diameter(region, h)
    rmin, rmax = 4.0 * h, diam / 4.0
    if rmax <= rmin:
        raise InputError("region too small for the distance window")
    if np.ptp(u[region]) == 0:
        return ModulusReport(math.inf, 0.0, 0, (rmin, rmax), target_exponent)
    r, omega, pairs = _offset_moduli(u, region, h, rmin, rmax)
    edges = np.exp(np.linspace(math.log(rmin), math.log(rmax), n_bins + 1))
    which = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, n_bins - 1)
    bins = []
    for k in range(n_bins):
        sel = np.nonzero(which == k)[0]
        if sel.size:
            j = sel[np.argmax(omega[sel])]
            if omega[j] > 0:
                bins.append((float(r[j]), float(omega[j])))
    if len(bins) < 2:
        return ModulusReport(math.inf, 0.0, pairs, (rmin, rmax), target_exponent, bins=bins)
    lr = np.log([b[0] for b in bins])
    lw = np.log([b[1] for b in bins])
    slope, intercept = np.polyfit(lr, lw, 1)
    return ModulusReport(float(slope), float(math.exp(intercept)), pairs, (rmin, rmax), target_exponent, bins=bins)
