"""Builders for the reference problems used by the test-suite and the CLI."""
from __future__ import annotations

import numpy as np

from .grid import Grid2, ProblemSpec
from .metric import MetricField, MetricKind


def make_metric(kind, shape, weight=1.0, matrix=None):
    if isinstance(kind, MetricField):
        return kind
    return MetricField.from_kind(kind, shape, weight=weight, matrix=matrix)


def square_grid(n=64, pad=4):
    """Unit square [0,1]^2 resolved by n x n interior cells, h = 1/n."""
    h = 1.0 / n
    size = n + 2 * pad
    origin = (-pad * h, -pad * h)
    xc = origin[0] + (np.arange(size) + 0.5) * h
    X, Y = np.meshgrid(xc, xc)
    q = np.stack([np.abs(X - 0.5) - 0.5, np.abs(Y - 0.5) - 0.5])
    outside = np.hypot(np.maximum(q[0], 0), np.maximum(q[1], 0))
    inside = np.minimum(np.maximum(q[0], q[1]), 0)
    sd = -(outside + inside)
    interior = np.zeros((size, size), dtype=bool)
    interior[pad : pad + n, pad : pad + n] = True
    return Grid2.from_mask(interior, h, origin, signed_distance=sd)


def disk_grid(n=64, radius=0.5, center=(0.5, 0.5), pad=6):
    """Disk inscribed in the unit square, analytic signed distance."""
    h = 1.0 / n
    size = n + 2 * pad
    origin = (-pad * h, -pad * h)
    xc = origin[0] + (np.arange(size) + 0.5) * h
    X, Y = np.meshgrid(xc, xc)
    sd = radius - np.hypot(X - center[0], Y - center[1])
    return Grid2.from_mask(sd > 0, h, origin, signed_distance=sd)


def constant_problem(n=64, value=3.0, metric="euclidean-weighted"):
    grid = square_grid(n)
    f = np.full(grid.shape, float(value))
    return ProblemSpec(grid, make_metric(metric, grid.shape), np.full(grid.shape, -np.inf), f)


def step_problem(n=64, metric="euclidean-weighted"):
    """f = 0 for x < 1/2 and 1 for x >= 1/2, no obstacle."""
    grid = square_grid(n)
    X, _ = grid.centers()
    f = (X >= 0.5).astype(float)
    return ProblemSpec(grid, make_metric(metric, grid.shape), np.full(grid.shape, -np.inf), f)


def block_mask(grid, lo=0.4, hi=0.6):
    X, Y = grid.centers()
    return grid.interior & (X >= lo) & (X <= hi) & (Y >= lo) & (Y <= hi)


def block_problem(n=64, metric="euclidean-weighted", lo=0.4, hi=0.6):
    """f = 0 outside, psi = 1 on the centered block; f is raised to psi inside."""
    grid = square_grid(n)
    blk = block_mask(grid, lo, hi)
    psi = np.where(blk, 1.0, -np.inf)
    f = np.where(blk, 1.0, 0.0)
    return ProblemSpec(grid, make_metric(metric, grid.shape), psi, f)


def disk_problem(datum, n=64, metric="euclidean-weighted", obstacle=None, radius=0.5):
    """Problem on the disk with f = datum(X, Y) and optional psi = obstacle(X, Y).

    Inside the domain f is replaced by max(f, psi) so the compatibility
    condition holds; only exterior values of f enter the energy.
    """
    grid = disk_grid(n, radius)
    X, Y = grid.centers()
    f = np.asarray(datum(X, Y), dtype=float)
    if obstacle is None:
        psi = np.full(grid.shape, -np.inf)
    else:
        psi = np.where(grid.interior, np.asarray(obstacle(X, Y), dtype=float), -np.inf)
        f = np.where(grid.interior, np.maximum(f, psi), f)
    return ProblemSpec(grid, make_metric(metric, grid.shape), psi, f)


def polar_angle(X, Y, center=(0.5, 0.5)):
    return np.arctan2(Y - center[1], X - center[0])


__all__ = [
    "MetricKind",
    "block_mask",
    "block_problem",
    "constant_problem",
    "disk_grid",
    "disk_problem",
    "make_metric",
    "polar_angle",
    "square_grid",
    "step_problem",
]
