"""Plain-text problem (LGP1), solution (LGS1) and field (LGF1) files.

All arrays are written row by row, row 0 first, with ``%.17g`` so that a
write/read/write cycle reproduces every token. Parsing is strict: unknown or
missing sections and short rows raise ``InputError`` naming the line.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InputError
from .grid import Grid2, ProblemSpec
from .metric import MetricField, MetricKind

PROBLEM_MAGIC = "LGP1"
SOLUTION_MAGIC = "LGS1"
FIELD_MAGIC = "LGF1"


def fmt_float(x):
    x = float(x)
    if x == -math.inf:
        return "-inf"
    if x == math.inf:
        return "inf"
    return "%.17g" % x


class _Lines:
    """Cursor over the non-blank lines of a file, remembering line numbers."""

    def __init__(self, text, name):
        self.name = name
        self.items = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
        self.pos = 0

    def error(self, msg, lineno=None):
        if lineno is None:
            lineno = self.items[self.pos][0] if self.pos < len(self.items) else "EOF"
        return InputError(f"{self.name}: line {lineno}: {msg}")

    def peek(self):
        return self.items[self.pos][1] if self.pos < len(self.items) else None

    def next(self, what):
        if self.pos >= len(self.items):
            raise InputError(f"{self.name}: unexpected end of file, missing {what}")
        item = self.items[self.pos]
        self.pos += 1
        return item

    def done(self):
        return self.pos >= len(self.items)


def _parse_header(cur, magic):
    lineno, toks = cur.next("magic line")
    if toks != [magic]:
        raise cur.error(f"expected magic '{magic}'", lineno)
    lineno, toks = cur.next("grid line")
    if len(toks) != 4 or toks[0] != "grid":
        raise cur.error("expected 'grid <nx> <ny> <h>'", lineno)
    try:
        nx, ny, h = int(toks[1]), int(toks[2]), float(toks[3])
    except ValueError as exc:
        raise cur.error(f"bad grid line: {exc}", lineno) from None
    if nx < 1 or ny < 1 or not (h > 0 and math.isfinite(h)):
        raise cur.error("grid sizes must be positive", lineno)
    origin = (0.0, 0.0)
    toks = cur.peek()
    if toks and toks[0] == "origin":
        lineno, toks = cur.next("origin line")
        if len(toks) != 3:
            raise cur.error("expected 'origin <x> <y>'", lineno)
        try:
            origin = (float(toks[1]), float(toks[2]))
        except ValueError as exc:
            raise cur.error(f"bad origin: {exc}", lineno) from None
    return nx, ny, h, origin


def _parse_rows(cur, name, nx, ny, kind="float"):
    out = np.empty((ny, nx), dtype=bool if kind == "mask" else float)
    for r in range(ny):
        lineno, toks = cur.next(f"row {r} of section '{name}'")
        if len(toks) != nx:
            raise cur.error(f"section '{name}' row {r}: expected {nx} values, got {len(toks)}", lineno)
        if kind == "mask":
            bad = [t for t in toks if t not in ("I", "E")]
            if bad:
                raise cur.error(f"section '{name}': mask tokens must be I or E, got {bad[0]!r}", lineno)
            out[r] = [t == "I" for t in toks]
        else:
            try:
                out[r] = [float(t) for t in toks]
            except ValueError as exc:
                raise cur.error(f"section '{name}': {exc}", lineno) from None
            if np.any(np.isnan(out[r])):
                raise cur.error(f"section '{name}': nan is not allowed", lineno)
    return out


def _parse_sections(cur, nx, ny, allowed, required):
    found = {}
    while not cur.done():
        lineno, toks = cur.next("section header")
        if len(toks) != 1 or toks[0] not in allowed:
            if len(toks) >= 1 and "=" in toks[0]:
                cur.pos -= 1
                break
            raise cur.error(f"unknown section {' '.join(toks)!r}", lineno)
        name = toks[0]
        if name in found:
            raise cur.error(f"duplicate section '{name}'", lineno)
        found[name] = _parse_rows(cur, name, nx, ny, "mask" if name == "mask" else "float")
    missing = [s for s in required if s not in found]
    if missing:
        raise InputError(f"{cur.name}: missing section '{missing[0]}'")
    return found


def _metric_sections(kind):
    if kind is MetricKind.RIEMANNIAN:
        return ["m11", "m12", "m22"]
    return ["weight"]


def parse_problem(text, name="<problem>"):
    cur = _Lines(text, name)
    nx, ny, h, origin = _parse_header(cur, PROBLEM_MAGIC)
    lineno, toks = cur.next("metric line")
    if len(toks) != 2 or toks[0] != "metric":
        raise cur.error("expected 'metric <kind>'", lineno)
    try:
        kind = MetricKind(toks[1])
    except ValueError:
        raise cur.error(f"unknown metric kind {toks[1]!r}", lineno) from None
    msecs = _metric_sections(kind)
    required = msecs + ["mask", "f", "psi"]
    sec = _parse_sections(cur, nx, ny, set(required) | {"sdf"}, required)
    for key in ["mask", "f"] + msecs:
        if key != "mask" and not np.all(np.isfinite(sec[key])):
            raise InputError(f"{name}: section '{key}' must be finite")
    if np.any(sec["psi"] == np.inf):
        raise InputError(f"{name}: section 'psi' may not contain +inf")
    shape = (ny, nx)
    if kind is MetricKind.RIEMANNIAN:
        m = np.empty(shape + (2, 2))
        m[..., 0, 0] = sec["m11"]
        m[..., 0, 1] = m[..., 1, 0] = sec["m12"]
        m[..., 1, 1] = sec["m22"]
        metric = MetricField.riemannian(m, shape)
    else:
        metric = MetricField.from_kind(kind, shape, weight=sec["weight"])
    grid = Grid2.from_mask(sec["mask"], h, origin, signed_distance=sec.get("sdf"))
    return ProblemSpec(grid, metric, sec["psi"], sec["f"])


def read_problem(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    return parse_problem(text, str(path))


def _rows(arr, fmt=fmt_float):
    return [" ".join(fmt(v) for v in row) for row in np.asarray(arr)]


def _header(magic, grid):
    lines = [magic, f"grid {grid.nx} {grid.ny} {fmt_float(grid.h)}"]
    if grid.origin != (0.0, 0.0):
        lines.append(f"origin {fmt_float(grid.origin[0])} {fmt_float(grid.origin[1])}")
    return lines


def format_problem(problem, include_sdf=True):
    grid, metric = problem.grid, problem.metric
    lines = _header(PROBLEM_MAGIC, grid)
    lines.append(f"metric {metric.kind.value}")
    if metric.kind is MetricKind.RIEMANNIAN:
        for key, (i, j) in (("m11", (0, 0)), ("m12", (0, 1)), ("m22", (1, 1))):
            lines.append(key)
            lines += _rows(metric.matrix[..., i, j])
    else:
        lines.append("weight")
        lines += _rows(metric.weight)
    lines.append("mask")
    lines += _rows(grid.interior, lambda v: "I" if v else "E")
    lines.append("f")
    lines += _rows(problem.f)
    lines.append("psi")
    psi = np.where(problem.psi <= -problem.big, -np.inf, problem.psi)
    lines += _rows(psi)
    if include_sdf:
        lines.append("sdf")
        lines += _rows(grid.signed_distance)
    return "\n".join(lines) + "\n"


def write_problem(path, problem, include_sdf=True):
    with open(path, "w") as fh:
        fh.write(format_problem(problem, include_sdf))


def format_solution(grid, solution):
    lines = _header(SOLUTION_MAGIC, grid)
    for key, arr in (("u", solution.u), ("Tx", solution.T[0]), ("Ty", solution.T[1])):
        lines.append(key)
        lines += _rows(arr)
    lines.append(
        f"energy={fmt_float(solution.primal_energy)} dual={fmt_float(solution.dual_energy)} "
        f"gap={fmt_float(solution.gap)} iters={solution.iters} converged={int(solution.converged)}"
    )
    return "\n".join(lines) + "\n"


def write_solution(path, grid, solution):
    with open(path, "w") as fh:
        fh.write(format_solution(grid, solution))


def parse_solution(text, name="<solution>"):
    """Returns ``(grid_line, arrays, footer)``; grid_line is (nx, ny, h, origin)."""
    cur = _Lines(text, name)
    nx, ny, h, origin = _parse_header(cur, SOLUTION_MAGIC)
    sec = _parse_sections(cur, nx, ny, {"u", "Tx", "Ty"}, ["u", "Tx", "Ty"])
    for key, arr in sec.items():
        if not np.all(np.isfinite(arr)):
            raise InputError(f"{name}: section '{key}' must be finite")
    lineno, toks = cur.next("footer line")
    footer = {}
    for tok in toks:
        key, sep, val = tok.partition("=")
        if not sep:
            raise cur.error(f"bad footer token {tok!r}", lineno)
        footer[key] = val
    need = ["energy", "dual", "gap", "iters", "converged"]
    missing = [k for k in need if k not in footer]
    if missing or set(footer) - set(need):
        raise cur.error(f"footer must hold exactly {need}", lineno)
    try:
        footer = {
            "energy": float(footer["energy"]),
            "dual": float(footer["dual"]),
            "gap": float(footer["gap"]),
            "iters": int(footer["iters"]),
            "converged": bool(int(footer["converged"])),
        }
    except ValueError as exc:
        raise cur.error(f"bad footer value: {exc}", lineno) from None
    if not cur.done():
        raise cur.error("trailing content after footer")
    return (nx, ny, h, origin), sec, footer


def read_solution(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    return parse_solution(text, str(path))


def format_field(grid, name, arr, binary=False):
    lines = _header(FIELD_MAGIC, grid)
    lines.append(name)
    fmt = (lambda v: str(int(v))) if binary else fmt_float
    lines += _rows(arr, fmt)
    return "\n".join(lines) + "\n"


def write_field(path, grid, name, arr, binary=False):
    with open(path, "w") as fh:
        fh.write(format_field(grid, name, arr, binary))


def parse_field(text, name="<field>"):
    cur = _Lines(text, name)
    nx, ny, h, origin = _parse_header(cur, FIELD_MAGIC)
    lineno, toks = cur.next("field name")
    if len(toks) != 1:
        raise cur.error("expected a single field name", lineno)
    arr = _parse_rows(cur, toks[0], nx, ny)
    if not cur.done():
        raise cur.error("trailing content after field")
    return (nx, ny, h, origin), toks[0], arr
