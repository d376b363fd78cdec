"""Cell-centered rectangular grids, difference operators and discrete energies.

Scalar fields are arrays of shape ``(ny, nx)``; vector fields are pairs
``(px, py)`` of such arrays. Axis 1 is the x direction, axis 0 the y direction.

The domain Omega is the set of INTERIOR cells. EXTERIOR cells carry the datum
f; the BOUNDARY band is the set of exterior cells 4-adjacent to the interior.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .errors import InputError
from .metric import MetricField

BIG_FACTOR = 1e12


class Cell(IntEnum):
    EXTERIOR = 0
    INTERIOR = 1
    BOUNDARY = 2


@dataclass(frozen=True, eq=False)
class Grid2:
    h: float
    labels: np.ndarray
    signed_distance: np.ndarray
    origin: tuple = (0.0, 0.0)

    @classmethod
    def from_mask(cls, interior, h, origin=(0.0, 0.0), signed_distance=None):
        """Build a grid from a boolean interior mask.

        Without an explicit ``signed_distance`` one is derived from the mask
        by a Euclidean distance transform between cell centers, shifted by
        h/2 so that it changes sign across the interior/exterior interface.
        """
        interior = np.asarray(interior, dtype=bool)
        if interior.ndim != 2:
            raise InputError("mask must be 2-D")
        if h <= 0 or not np.isfinite(h):
            raise InputError(f"spacing must be positive, got {h}")
        if not interior.any():
            raise InputError("mask has no interior cells")
        if interior[0].any() or interior[-1].any() or interior[:, 0].any() or interior[:, -1].any():
            raise InputError("interior cells must not touch the grid edge")
        _, ncomp = ndimage.label(interior)
        if ncomp != 1:
            raise InputError(f"interior must be one 4-connected component, found {ncomp}")
        near = ndimage.binary_dilation(interior, structure=ndimage.generate_binary_structure(2, 1))
        labels = np.full(interior.shape, Cell.EXTERIOR, dtype=np.int8)
        labels[near & ~interior] = Cell.BOUNDARY
        labels[interior] = Cell.INTERIOR
        if signed_distance is None:
            signed_distance = mask_signed_distance(interior, h)
        else:
            signed_distance = np.asarray(signed_distance, dtype=float)
            if signed_distance.shape != interior.shape:
                raise InputError("signed distance shape does not match mask")
            if np.any((signed_distance > 0) != interior):
                raise InputError("signed distance must be positive exactly on interior cells")
        labels.setflags(write=False)
        signed_distance = np.array(signed_distance, dtype=float)
        signed_distance.setflags(write=False)
        return cls(float(h), labels, signed_distance, (float(origin[0]), float(origin[1])))

    @property
    def shape(self):
        return self.labels.shape

    @property
    def ny(self):
        return self.labels.shape[0]

    @property
    def nx(self):
        return self.labels.shape[1]

    @property
    def interior(self):
        return self.labels == Cell.INTERIOR

    @property
    def exterior(self):
        return self.labels != Cell.INTERIOR

    @property
    def boundary(self):
        return self.labels == Cell.BOUNDARY

    @property
    def support(self):
        """Cells whose forward-difference stencil touches the interior."""
        inner = self.interior
        s = inner.copy()
        s[:, :-1] |= inner[:, 1:]
        s[:-1, :] |= inner[1:, :]
        return s

    @property
    def area(self):
        return float(self.interior.sum()) * self.h**2

    def centers(self):
        """Cell-center coordinates ``(X, Y)``."""
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.h
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(x, y)

    def same_layout(self, other):
        return (
            self.shape == other.shape
            and self.h == other.h
            and np.array_equal(self.labels, other.labels)
        )


def mask_signed_distance(interior, h):
    inside = ndimage.distance_transform_edt(interior) * h - 0.5 * h
    outside = ndimage.distance_transform_edt(~interior) * h - 0.5 * h
    return np.where(interior, inside, -outside)


# -- difference operators --------------------------------------------------


def grad(u, h):
    """Forward differences with a zero difference at the far grid edge."""
    u = np.asarray(u, dtype=float)
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = (u[:, 1:] - u[:, :-1]) / h
    gy[:-1, :] = (u[1:, :] - u[:-1, :]) / h
    return gx, gy


def div(px, py, h):
    """Backward-difference divergence, the exact negative adjoint of ``grad``."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    d = np.zeros_like(px)
    d[:, 0] = px[:, 0]
    d[:, 1:-1] = px[:, 1:-1] - px[:, :-2]
    d[:, -1] = -px[:, -2]
    d[0, :] += py[0, :]
    d[1:-1, :] += py[1:-1, :] - py[:-2, :]
    d[-1, :] -= py[-2, :]
    return d / h


def tv_phi(u, grid, metric, region=None):
    """Discrete phi-total variation: sum over ``region`` of h^2 phi(x, grad u)."""
    gx, gy = grad(u, grid.h)
    dens = metric.norm(gx, gy)
    if region is not None:
        dens = dens[np.asarray(region, dtype=bool)]
    return float(np.sum(dens) * grid.h**2)


def edge_masks(grid):
    """Forward-difference edges (x, x+e1) and (x, x+e2) that touch the interior."""
    inner = grid.interior
    mx = np.zeros(grid.shape, dtype=bool)
    my = np.zeros(grid.shape, dtype=bool)
    mx[:, :-1] = inner[:, :-1] | inner[:, 1:]
    my[:-1, :] = inner[:-1, :] | inner[1:, :]
    return mx, my


def relaxed_grad(u, grid):
    """Forward differences restricted to edges touching the interior."""
    mx, my = edge_masks(grid)
    gx, gy = grad(u, grid.h)
    return gx * mx, gy * my


def relaxed_tv(u, grid, metric):
    """Discrete relaxed energy of a field already extended by f outside.

    Sums h^2 phi(x, g) over the stencil support, where g keeps only the
    differences across edges touching the interior. Differences between two
    exterior cells are constants of the datum and are left out. For the
    separable ell1 family this equals the interior variation plus
    ``boundary_term`` exactly.
    """
    gx, gy = relaxed_grad(u, grid)
    dens = metric.norm(gx, gy)
    return float(np.sum(dens[grid.support]) * grid.h**2)


def perimeter_phi(E, grid, metric, region=None):
    E = np.asarray(E)
    if not np.all((E == 0) | (E == 1)):
        raise InputError("perimeter_phi expects a binary field")
    return tv_phi(E.astype(float), grid, metric, region)


def interface_edges(grid):
    """Edges between an interior cell and an exterior neighbour.

    Returns a dict of index arrays: ``origin`` (row, col) of the cell at which
    the forward difference across the edge is stored, ``axis`` (0 = x, 1 = y),
    ``inner`` and ``outer`` cells, and ``sign`` of the outer normal along the
    axis (+1 if the exterior cell is at origin + e_axis).
    """
    inner = grid.interior
    rows, cols, axes, signs = [], [], [], []
    ir, ic, orr, oc = [], [], [], []
    for axis, (dr, dc) in enumerate(((0, 1), (1, 0))):
        a = inner[: inner.shape[0] - dr, : inner.shape[1] - dc]
        b = inner[dr:, dc:]
        for sgn, mask in ((1, a & ~b), (-1, ~a & b)):
            r, c = np.nonzero(mask)
            rows.append(r)
            cols.append(c)
            axes.append(np.full(r.size, axis))
            signs.append(np.full(r.size, sgn))
            if sgn == 1:
                ir.append(r), ic.append(c), orr.append(r + dr), oc.append(c + dc)
            else:
                ir.append(r + dr), ic.append(c + dc), orr.append(r), oc.append(c)
    cat = np.concatenate
    return {
        "origin": (cat(rows), cat(cols)),
        "axis": cat(axes),
        "sign": cat(signs),
        "inner": (cat(ir), cat(ic)),
        "outer": (cat(orr), cat(oc)),
    }


def boundary_term(u, f, grid, metric):
    """Sum over interface edges of h phi(x, nu) |u_in - f_out|.

    phi is sampled at the cell holding the edge's forward difference, which
    makes the term agree with the difference stencil used by ``tv_phi``.
    """
    e = interface_edges(grid)
    w = np.where(
        e["axis"] == 0,
        metric.axis_norm(0)[e["origin"]],
        metric.axis_norm(1)[e["origin"]],
    )
    jump = np.abs(np.asarray(u)[e["inner"]] - np.asarray(f)[e["outer"]])
    return float(np.sum(grid.h * w * jump))


# -- problems ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Grid + metric + obstacle + exterior datum, with f >= psi enforced.

    ``psi`` may contain ``-inf`` for "no obstacle"; it is stored as -BIG with
    BIG = 1e12 * (field scale).
    """

    grid: Grid2
    metric: MetricField
    psi: np.ndarray
    f: np.ndarray
    holder_alpha: float | None = None
    big: float = field(init=False)

    def __post_init__(self):
        shape = self.grid.shape
        f = np.array(self.f, dtype=float)
        psi = np.array(self.psi, dtype=float)
        if f.shape != shape or psi.shape != shape:
            raise InputError(f"f and psi must have grid shape {shape}")
        if self.metric.shape != shape:
            raise InputError("metric shape does not match grid")
        if not np.all(np.isfinite(f)):
            raise InputError("f must be finite on every cell")
        if np.any(np.isnan(psi)) or np.any(psi == np.inf):
            raise InputError("psi must be finite or -inf")
        scale = max(1.0, float(np.max(np.abs(f))))
        finite = np.isfinite(psi)
        if finite.any():
            scale = max(scale, float(np.max(np.abs(psi[finite]))))
        big = BIG_FACTOR * scale
        psi = np.where(psi <= -big, -big, psi)
        check = self.grid.interior | self.grid.boundary
        bad = check & (f < psi)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise InputError(
                f"compatibility f >= psi violated at {bad.sum()} cells, first at ({r}, {c})"
            )
        f.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "big", big)

    @property
    def has_obstacle(self):
        return self.obstacle_cells.any()

    @property
    def obstacle_cells(self):
        """Interior cells carrying a finite obstacle."""
        return self.grid.interior & (self.psi > -self.big)

    def with_data(self, f=None, psi=None, metric=None):
        if psi is None:
            # keep "no obstacle" cells unbounded, since BIG depends on the data scale
            psi = np.where(self.psi <= -self.big, -np.inf, self.psi)
        return ProblemSpec(
            self.grid,
            self.metric if metric is None else metric,
            psi,
            self.f if f is None else f,
            self.holder_alpha,
        )

    def extend(self, u):
        """Copy of ``u`` with exterior cells set to f."""
        out = np.array(u, dtype=float)
        ext = self.grid.exterior
        out[ext] = self.f[ext]
        return out

    def value_bounds(self):
        """(lo, hi) cellwise bounds that contain every minimizer.

        Truncating u to [min f, max(f, psi)] over the data touched by the
        energy never raises it for absolute norms, so the bounds are redundant
        constraints. They make the dual function finite everywhere.
        """
        touched = self.grid.support | self.grid.boundary
        ext = touched & self.grid.exterior
        fvals = self.f[ext]
        lo_f, hi_f = float(fvals.min()), float(fvals.max())
        obst = self.obstacle_cells
        hi = max(hi_f, float(self.psi[obst].max())) if obst.any() else hi_f
        lo = np.maximum(self.psi, lo_f)
        return lo, hi
