"""Anisotropic norms phi(x, xi) sampled per grid cell.

Three families are supported:

* ``euclidean-weighted``: ``phi(x, xi) = a(x) |xi|``
* ``ell1-weighted``: ``phi(x, xi) = a(x) (|xi_1| + |xi_2|)``
* ``riemannian``: ``phi(x, xi) = sqrt(xi^T M(x) xi)``

Fields are stored as arrays of shape ``(ny, nx)`` (axis 0 is y, axis 1 is x)
and every method is vectorized over the grid. The single-cell functions at the
bottom of the module take a ``(row, col)`` cell index and a 2-vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numba
import numpy as np

from .errors import DegenerateDirectionError, InputError

MIN_WEIGHT = 1e-12
MAX_CONDITION = 1e6


class MetricKind(str, Enum):
    EUCLIDEAN = "euclidean-weighted"
    ELL1 = "ell1-weighted"
    RIEMANNIAN = "riemannian"


@dataclass(frozen=True, eq=False)
class MetricField:
    """Immutable per-cell norm field.

    ``alpha`` is the tightest constant with
    ``alpha |xi| <= phi(x, xi) <= |xi| / alpha`` over all cells; it is computed
    at construction and never supplied by the caller.
    """

    kind: MetricKind
    shape: tuple
    weight: np.ndarray | None = None
    matrix: np.ndarray | None = None
    alpha: float = 1.0

    # -- construction -------------------------------------------------------

    @classmethod
    def euclidean(cls, weight=1.0, shape=None):
        return cls._weighted(MetricKind.EUCLIDEAN, weight, shape)

    @classmethod
    def ell1(cls, weight=1.0, shape=None):
        return cls._weighted(MetricKind.ELL1, weight, shape)

    @classmethod
    def _weighted(cls, kind, weight, shape):
        w = np.asarray(weight, dtype=float)
        if shape is None:
            if w.ndim != 2:
                raise InputError("shape is required for a scalar weight")
            shape = w.shape
        w = np.array(np.broadcast_to(w, shape), dtype=float)
        if not np.all(np.isfinite(w)) or w.min() < MIN_WEIGHT:
            raise InputError(f"weight must be finite and >= {MIN_WEIGHT}")
        w.setflags(write=False)
        if kind is MetricKind.EUCLIDEAN:
            alpha = min(w.min(), 1.0 / w.max())
        else:
            # |xi| <= |xi|_1 <= sqrt(2) |xi|
            alpha = min(w.min(), 1.0 / (np.sqrt(2.0) * w.max()))
        return cls(kind, tuple(shape), weight=w, alpha=float(alpha))

    @classmethod
    def riemannian(cls, matrix, shape=None):
        m = np.asarray(matrix, dtype=float)
        if shape is None:
            if m.ndim != 4:
                raise InputError("shape is required for a constant matrix")
            shape = m.shape[:2]
        m = np.array(np.broadcast_to(m, tuple(shape) + (2, 2)), dtype=float)
        if not np.all(np.isfinite(m)):
            raise InputError("metric matrix has non-finite entries")
        if not np.allclose(m[..., 0, 1], m[..., 1, 0], rtol=1e-12, atol=1e-14):
            raise InputError("metric matrix must be symmetric")
        m[..., 1, 0] = m[..., 0, 1]
        lam = np.linalg.eigvalsh(m)
        if lam[..., 0].min() <= 0:
            raise InputError("metric matrix must be positive definite")
        if (lam[..., 1] / lam[..., 0]).max() > MAX_CONDITION:
            raise InputError(f"metric condition number exceeds {MAX_CONDITION:g}")
        m.setflags(write=False)
        alpha = min(np.sqrt(lam[..., 0].min()), 1.0 / np.sqrt(lam[..., 1].max()))
        return cls(MetricKind.RIEMANNIAN, tuple(shape), matrix=m, alpha=float(alpha))

    @classmethod
    def from_kind(cls, kind, shape, weight=None, matrix=None):
        kind = MetricKind(kind)
        if kind is MetricKind.RIEMANNIAN:
            return cls.riemannian(matrix, shape)
        return cls._weighted(kind, 1.0 if weight is None else weight, shape)

    def scaled(self, c):
        """Metric ``c * phi`` for a positive constant ``c``."""
        if self.kind is MetricKind.RIEMANNIAN:
            return MetricField.riemannian(self.matrix * c * c)
        return MetricField._weighted(self.kind, self.weight * c, self.shape)

    @property
    def x_independent(self):
        if self.kind is MetricKind.RIEMANNIAN:
            return bool(np.all(self.matrix == self.matrix[0, 0]))
        return bool(np.all(self.weight == self.weight.flat[0]))

    # -- vectorized field operations ---------------------------------------

    def _coeffs(self, index):
        if self.kind is MetricKind.RIEMANNIAN:
            return self.matrix if index is None else self.matrix[index]
        return self.weight if index is None else self.weight[index]

    def norm(self, px, py, index=None):
        """phi(x, p) for all cells (or ``index``-selected cells)."""
        c = self._coeffs(index)
        if self.kind is MetricKind.EUCLIDEAN:
            return c * np.hypot(px, py)
        if self.kind is MetricKind.ELL1:
            return c * (np.abs(px) + np.abs(py))
        q = c[..., 0, 0] * px * px + 2.0 * c[..., 0, 1] * px * py + c[..., 1, 1] * py * py
        return np.sqrt(np.maximum(q, 0.0))

    def dual_norm(self, px, py, index=None):
        """phi^0(x, p) = sup{p.q : phi(x, q) <= 1}."""
        c = self._coeffs(index)
        if self.kind is MetricKind.EUCLIDEAN:
            return np.hypot(px, py) / c
        if self.kind is MetricKind.ELL1:
            return np.maximum(np.abs(px), np.abs(py)) / c
        det = c[..., 0, 0] * c[..., 1, 1] - c[..., 0, 1] ** 2
        q = (c[..., 1, 1] * px * px - 2.0 * c[..., 0, 1] * px * py + c[..., 0, 0] * py * py) / det
        return np.sqrt(np.maximum(q, 0.0))

    def norm_grad(self, px, py, index=None):
        """phi_xi(x, p); cells with p == 0 get the zero vector.

        For the ell1 family this is the sign vector, i.e. one selection from
        the subdifferential on the coordinate axes.
        """
        c = self._coeffs(index)
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        if self.kind is MetricKind.EUCLIDEAN:
            r = np.hypot(px, py)
            safe = np.where(r > 0, r, 1.0)
            return c * px / safe * (r > 0), c * py / safe * (r > 0)
        if self.kind is MetricKind.ELL1:
            return c * np.sign(px), c * np.sign(py)
        n = self.norm(px, py, index)
        safe = np.where(n > 0, n, 1.0)
        gx = (c[..., 0, 0] * px + c[..., 0, 1] * py) / safe
        gy = (c[..., 0, 1] * px + c[..., 1, 1] * py) / safe
        return gx * (n > 0), gy * (n > 0)

    def axis_norm(self, axis, index=None):
        """phi(x, e_axis), with axis 0 = x direction and 1 = y direction."""
        c = self._coeffs(index)
        if self.kind is MetricKind.RIEMANNIAN:
            return np.sqrt(c[..., axis, axis])
        return np.array(c, dtype=float, copy=True)

    def project(self, px, py, index=None):
        """Euclidean projection of p onto the dual ball {phi^0(x, q) <= 1}."""
        c = self._coeffs(index)
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        if self.kind is MetricKind.EUCLIDEAN:
            s = np.maximum(1.0, np.hypot(px, py) / c)
            return px / s, py / s
        if self.kind is MetricKind.ELL1:
            return np.clip(px, -c, c), np.clip(py, -c, c)
        table = self.dual_table if index is None else ellipse_table(c)
        return _project_ellipse(table, px, py)

    @cached_property
    def dual_table(self):
        """Matrix entries and eigendecomposition per cell, for the dual projection."""
        if self.kind is not MetricKind.RIEMANNIAN:
            raise AttributeError("dual_table is only defined for riemannian metrics")
        return ellipse_table(np.broadcast_to(self.matrix, self.shape + (2, 2)))

    def tightest_alpha_sample(self, rng, n=64):
        """Largest observed alpha over ``n`` random (cell, xi) samples (testing aid)."""
        rows = rng.integers(0, self.shape[0], n)
        cols = rng.integers(0, self.shape[1], n)
        xi = rng.normal(size=(2, n))
        ratio = self.norm(xi[0], xi[1], (rows, cols)) / np.hypot(xi[0], xi[1])
        return min(ratio.min(), 1.0 / ratio.max())


ELLIPSE_ITERS = 60


@numba.njit(cache=True)
def ellipse_cell(px, py, m00, m01, m11, l0, l1, v00, v01, v10, v11):
    """Projection of p onto {q^T M^{-1} q <= 1} at one cell, given eigh(M).

    q = (I + mu M^{-1})^{-1} p with mu >= 0 chosen so that q^T M^{-1} q = 1.
    """
    pt0 = v00 * px + v10 * py
    pt1 = v01 * px + v11 * py
    if pt0 * pt0 / l0 + pt1 * pt1 / l1 <= 1.0:
        return px, py
    a0 = pt0 * pt0 * l0
    a1 = pt1 * pt1 * l1
    mu = 0.0
    for _ in range(ELLIPSE_ITERS):
        d0 = l0 + mu
        d1 = l1 + mu
        g = a0 / (d0 * d0) + a1 / (d1 * d1)
        dg = -2.0 * (a0 / (d0 * d0 * d0) + a1 / (d1 * d1 * d1))
        step = (g - 1.0) / (dg if dg < 0 else -1.0)
        mu -= step
        if abs(step) <= 1e-15 * (1.0 + mu):
            break
    q0 = pt0 * l0 / (l0 + mu)
    q1 = pt1 * l1 / (l1 + mu)
    qx = v00 * q0 + v01 * q1
    qy = v10 * q0 + v11 * q1
    # Newton converges from below; a final radial rescale guards the bound.
    det = m00 * m11 - m01 * m01
    r = math.sqrt(max(m11 * qx * qx - 2 * m01 * qx * qy + m00 * qy * qy, 0.0) / det)
    if r > 1.0:
        qx /= r
        qy /= r
    return qx, qy


@numba.njit(cache=True)
def _ellipse_flat(px, py, m00, m01, m11, l0, l1, v00, v01, v10, v11):
    qx = np.empty(px.size)
    qy = np.empty(px.size)
    for i in range(px.size):
        qx[i], qy[i] = ellipse_cell(px[i], py[i], m00[i], m01[i], m11[i], l0[i], l1[i], v00[i], v01[i], v10[i], v11[i])
    return qx, qy


def ellipse_table(m):
    """Per-cell (m00, m01, m11, l0, l1, v00, v01, v10, v11) stacked on the last axis."""
    lam, vec = np.linalg.eigh(m)
    return np.stack(
        [m[..., 0, 0], m[..., 0, 1], m[..., 1, 1], lam[..., 0], lam[..., 1],
         vec[..., 0, 0], vec[..., 0, 1], vec[..., 1, 0], vec[..., 1, 1]],
        axis=-1,
    )


def _project_ellipse(table, px, py):
    px, py = np.broadcast_arrays(np.asarray(px, dtype=float), np.asarray(py, dtype=float))
    shape = np.broadcast_shapes(px.shape, table.shape[:-1])
    cols = [np.ascontiguousarray(np.broadcast_to(a, shape), dtype=float).ravel() for a in (px, py)]
    cols += [np.ascontiguousarray(np.broadcast_to(table[..., k], shape)).ravel() for k in range(9)]
    qx, qy = _ellipse_flat(*cols)
    return qx.reshape(shape), qy.reshape(shape)


# -- single-cell API ----------------------------------------------------------


def _check_cell(metric, x):
    row, col = x
    ny, nx = metric.shape
    if not (0 <= row < ny and 0 <= col < nx):
        raise IndexError(f"cell {x} outside grid of shape {metric.shape}")
    return (int(row), int(col))


def _check_vec(v):
    v = np.asarray(v, dtype=float)
    if v.shape != (2,) or not np.all(np.isfinite(v)):
        raise InputError(f"expected a finite 2-vector, got {v!r}")
    return v


def evaluate(metric, x, xi):
    """phi(x, xi) at one cell."""
    idx = _check_cell(metric, x)
    xi = _check_vec(xi)
    return float(metric.norm(xi[0], xi[1], idx))


def dual_evaluate(metric, x, p):
    idx = _check_cell(metric, x)
    p = _check_vec(p)
    return float(metric.dual_norm(p[0], p[1], idx))


def grad_xi(metric, x, xi, eps=1e-12):
    """phi_xi(x, xi) at one cell; raises for |xi| < eps."""
    idx = _check_cell(metric, x)
    xi = _check_vec(xi)
    if np.hypot(xi[0], xi[1]) < eps:
        raise DegenerateDirectionError(f"|xi| below {eps:g}: gradient undefined")
    gx, gy = metric.norm_grad(xi[0], xi[1], idx)
    return np.array([float(gx), float(gy)])


def project_dual_ball(metric, x, p):
    idx = _check_cell(metric, x)
    p = _check_vec(p)
    qx, qy = metric.project(p[0], p[1], idx)
    return np.array([float(qx), float(qy)])
