"""Graph-cut oracle for the constrained perimeter problem at one threshold.

For a threshold t the superlevel set E_t = {u > t} of a minimizer solves

    minimize P_phi(E)  subject to  E = L_t outside the domain,  E contains O_t,

with L_t = {f > t} on the exterior and O_t = {psi > t} on the interior. The
discrete perimeter is a sum of pairwise edge weights, so the problem is an
s-t min cut over the interior cells. Exterior neighbours are folded into
terminal capacities and obstacle cells are tied to the source with a large
capacity.

Among all minimum cuts the largest source side is returned (the maximal
minimizer), which makes the sets produced for increasing thresholds nest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import nnls

from .errors import InputError, SizeError, UnsupportedCombinationError
from .metric import MetricKind

BIG_CAPACITY_FACTOR = 1e9
MAX_BRUTE_CELLS = 25

# (row, col) offsets; axis 1 of the arrays is x, so (0, 1) is the x neighbour
OFFSETS_4 = ((0, 1), (1, 0))
OFFSETS_8 = ((0, 1), (1, 0), (1, 1), (1, -1))


# -- edge weights --------------------------------------------------------------


def _direction_vectors(offsets):
    # unit-spacing edge vectors in (x, y) coordinates
    return np.array([(dc, dr) for dr, dc in offsets], dtype=float)


def stencil_cost(weights, offsets, nu):
    """Cut cost per unit interface length for normals ``nu`` (shape (m, 2)).

    A straight interface with unit normal nu crosses |nu . e| edges of the
    family e per unit length (unit spacing), so the cost is sum_k w_k |nu.e_k|
    with w in units of h.
    """
    e = _direction_vectors(offsets)
    return np.abs(np.asarray(nu) @ e.T) @ np.asarray(weights, dtype=float)


def crofton_weights(stencil):
    """Cauchy-Crofton weights (in units of h) for the Euclidean length."""
    if stencil == 4:
        return np.array([math.pi / 4, math.pi / 4])
    return np.array([math.pi / 8, math.pi / 8, math.pi / (8 * math.sqrt(2)), math.pi / (8 * math.sqrt(2))])


def _fit_weights(norm_fn, offsets, n_angles=180):
    theta = np.linspace(0.0, math.pi, n_angles, endpoint=False)
    nu = np.column_stack([np.cos(theta), np.sin(theta)])
    A = np.abs(nu @ _direction_vectors(offsets).T)
    w, _ = nnls(A, norm_fn(nu[:, 0], nu[:, 1]))
    return w


def angular_bias(metric, stencil, index=(0, 0), n_angles=720):
    """Largest relative error of the stencil perimeter over interface angles at one cell."""
    offsets = OFFSETS_4 if stencil == 4 else OFFSETS_8
    w = _unit_weights(metric, stencil)[(slice(None),) + tuple(index)]
    theta = np.linspace(0.0, math.pi, n_angles, endpoint=False)
    nu = np.column_stack([np.cos(theta), np.sin(theta)])
    exact = metric.norm(nu[:, 0], nu[:, 1], index)
    return float(np.max(np.abs(stencil_cost(w, offsets, nu) / exact - 1.0)))


def _unit_weights(metric, stencil):
    """Per-cell weights of each edge family in units of h, shape (k, ny, nx)."""
    if stencil not in (4, 8):
        raise InputError(f"stencil must be 4 or 8, got {stencil}")
    k = len(OFFSETS_4 if stencil == 4 else OFFSETS_8)
    if metric.kind is MetricKind.ELL1:
        # axis edges reproduce the ell1 perimeter exactly
        w = np.zeros((k,) + metric.shape)
        w[0] = metric.weight
        w[1] = metric.weight
        return w
    if metric.kind is MetricKind.EUCLIDEAN:
        c = crofton_weights(stencil)
        return c[:, None, None] * metric.weight[None]
    if stencil == 4:
        raise UnsupportedCombinationError("riemannian metrics need the 8-neighbour stencil")
    m = metric.matrix
    flat = m.reshape(-1, 4)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    fits = np.empty((len(uniq), k))
    for i, row in enumerate(uniq):
        a, b, _, d = row
        fits[i] = _fit_weights(lambda x, y: np.sqrt(a * x * x + 2 * b * x * y + d * y * y), OFFSETS_8)
    return fits[np.ravel(inverse)].T.reshape((k,) + metric.shape)


# -- graph ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CutGraph:
    """Pairwise cut graph over the interior cells of one problem.

    ``edges`` join interior nodes; ``source_cap`` is paid when a node is left
    out of E (an exterior neighbour in L), ``sink_cap`` when it is put in E
    (an exterior neighbour outside L). ``obstacle`` nodes are tied to the
    source with capacity ``big``.
    """

    shape: tuple
    stencil: int
    cells: tuple
    index: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_w: np.ndarray
    ext_node: np.ndarray
    ext_cell: tuple
    ext_w: np.ndarray
    source_cap: np.ndarray
    sink_cap: np.ndarray
    obstacle: np.ndarray
    big: float

    @property
    def n_nodes(self):
        return len(self.cells[0])


def _edge_lists(problem, stencil):
    grid = problem.grid
    h = grid.h
    inner = grid.interior
    ny, nx = grid.shape
    w_unit = _unit_weights(problem.metric, stencil)
    offsets = OFFSETS_4 if stencil == 4 else OFFSETS_8
    exact_origin = problem.metric.kind is MetricKind.ELL1
    pairs = []
    for k, (dr, dc) in enumerate(offsets):
        r0, r1 = 0, ny - dr
        c0, c1 = max(0, -dc), nx - max(0, dc)
        a = (slice(r0, r1), slice(c0, c1))
        b = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
        touch = inner[a] | inner[b]
        if exact_origin:
            # weight of the forward difference stored at the origin cell
            w = h * w_unit[k][a]
        else:
            w = h * 0.5 * (w_unit[k][a] + w_unit[k][b])
        rr, cc = np.nonzero(touch & (w > 0))
        pairs.append((rr + r0, cc + c0, rr + r0 + dr, cc + c0 + dc, w[rr, cc]))
    cat = np.concatenate
    return tuple(cat([p[i] for p in pairs]) for i in range(5))


def build_cut_graph(problem, t, stencil=4):
    """Cut graph for the level-set problem at threshold ``t``."""
    if not math.isfinite(t):
        raise InputError("threshold must be finite")
    grid = problem.grid
    inner = grid.interior
    index = np.full(grid.shape, -1, dtype=np.int64)
    cells = np.nonzero(inner)
    index[cells] = np.arange(len(cells[0]))
    ra, ca, rb, cb, w = _edge_lists(problem, stencil)
    ia = index[ra, ca]
    ib = index[rb, cb]
    both = (ia >= 0) & (ib >= 0)
    # edges with one exterior end: node is the interior end
    node = np.where(ia >= 0, ia, ib)[~both]
    ext_cell = (np.where(ia >= 0, rb, ra)[~both], np.where(ia >= 0, cb, ca)[~both])
    ext_w = w[~both]
    n = len(cells[0])
    L = problem.f[ext_cell] > t
    source_cap = np.bincount(node[L], weights=ext_w[L], minlength=n)
    sink_cap = np.bincount(node[~L], weights=ext_w[~L], minlength=n)
    obstacle = problem.psi[cells] > t
    finite_max = max(float(w.max(initial=0.0)), 1e-300)
    return CutGraph(
        shape=grid.shape,
        stencil=stencil,
        cells=cells,
        index=index,
        edge_i=ia[both],
        edge_j=ib[both],
        edge_w=w[both],
        ext_node=node,
        ext_cell=ext_cell,
        ext_w=ext_w,
        source_cap=source_cap,
        sink_cap=sink_cap,
        obstacle=obstacle,
        big=BIG_CAPACITY_FACTOR * finite_max,
    )


def cut_value(graph, x):
    """Energy of the node labelling ``x`` (1 = in E); ``inf`` if E misses O."""
    x = np.asarray(x, dtype=bool)
    if np.any(graph.obstacle & ~x):
        return math.inf
    pair = float(np.sum(graph.edge_w[x[graph.edge_i] != x[graph.edge_j]]))
    return pair + float(np.sum(graph.source_cap[~x])) + float(np.sum(graph.sink_cap[x]))


def set_energy(problem, E, t, stencil=4):
    """Cut value of a full-grid binary field (exterior cells are ignored)."""
    graph = build_cut_graph(problem, t, stencil)
    return cut_value(graph, np.asarray(E, dtype=bool)[graph.cells])


# -- max flow --------------------------------------------------------------------


@numba.njit(cache=True)
def _maxflow(n, start, head, cap, rev, s, t, delta0, eps):
    flow = np.zeros(cap.shape[0])
    parent = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    total = 0.0
    delta = delta0
    while True:
        thr = delta if delta > eps else eps
        while True:
            for v in range(n):
                parent[v] = -1
            parent[s] = -2
            qh = 0
            qt = 1
            queue[0] = s
            found = False
            while qh < qt and not found:
                v = queue[qh]
                qh += 1
                for a in range(start[v], start[v + 1]):
                    w = head[a]
                    if parent[w] == -1 and cap[a] - flow[a] > thr:
                        parent[w] = a
                        if w == t:
                            found = True
                            break
                        queue[qt] = w
                        qt += 1
            if not found:
                break
            b = np.inf
            v = t
            while v != s:
                a = parent[v]
                r = cap[a] - flow[a]
                if r < b:
                    b = r
                v = head[rev[a]]
            v = t
            while v != s:
                a = parent[v]
                flow[a] += b
                flow[rev[a]] -= b
                v = head[rev[a]]
            total += b
        if delta <= eps:
            break
        delta *= 0.5
    # nodes that can still reach the sink through unsaturated arcs
    reach = np.zeros(n, dtype=np.bool_)
    reach[t] = True
    queue[0] = t
    qh = 0
    qt = 1
    while qh < qt:
        v = queue[qh]
        qh += 1
        for a in range(start[v], start[v + 1]):
            w = head[a]
            # arc a is v -> w; its reverse w -> v has residual cap[rev] - flow[rev]
            ra = rev[a]
            if not reach[w] and cap[ra] - flow[ra] > eps:
                reach[w] = True
                queue[qt] = w
                qt += 1
    return total, reach


def _solve_graph(graph):
    n = graph.n_nodes
    s, t = n, n + 1
    tails, heads, caps = [], [], []

    def add(u, v, c_uv, c_vu):
        tails.append(u)
        heads.append(v)
        caps.append(c_uv)
        tails.append(v)
        heads.append(u)
        caps.append(c_vu)

    nodes = np.arange(n)
    src = graph.source_cap + np.where(graph.obstacle, graph.big, 0.0)
    add(graph.edge_i, graph.edge_j, graph.edge_w, graph.edge_w)
    m = src > 0
    add(np.full(m.sum(), s), nodes[m], src[m], np.zeros(m.sum()))
    m = graph.sink_cap > 0
    add(nodes[m], np.full(m.sum(), t), graph.sink_cap[m], np.zeros(m.sum()))
    tail = np.concatenate(tails).astype(np.int64)
    head = np.concatenate(heads).astype(np.int64)
    cap = np.concatenate(caps).astype(float)
    # arcs were added in blocks [forward, reverse]; pair them up
    rev = np.empty(len(tail), dtype=np.int64)
    pos = 0
    for i in range(0, len(tails), 2):
        k = len(tails[i])
        rev[pos : pos + k] = np.arange(pos + k, pos + 2 * k)
        rev[pos + k : pos + 2 * k] = np.arange(pos, pos + k)
        pos += 2 * k
    order = np.argsort(tail, kind="stable")
    new_pos = np.empty_like(order)
    new_pos[order] = np.arange(len(order))
    head = head[order]
    cap = cap[order]
    rev = new_pos[rev[order]]
    start = np.zeros(n + 3, dtype=np.int64)
    np.cumsum(np.bincount(tail, minlength=n + 2), out=start[1:])
    finite = cap[cap < graph.big]
    cmax = float(finite.max(initial=0.0))
    if cmax <= 0.0:
        delta0, eps = 0.0, 0.0
    else:
        delta0 = 2.0 ** math.floor(math.log2(cmax))
        eps = 1e-12 * cmax
    value, reach = _maxflow(n + 2, start, head, cap, rev, s, t, delta0, eps)
    return value, ~reach[:n]


# -- public API --------------------------------------------------------------------


def _to_field(problem, graph, x, t):
    E = np.asarray(problem.f > t, dtype=np.int8)
    E[problem.grid.interior] = 0
    E[graph.cells] = x.astype(np.int8)
    return E


def solve_levelset(problem, t, stencil=4, return_value=False):
    """Maximal minimizer of the constrained discrete perimeter at threshold ``t``.

    Returns a full-grid 0/1 field; exterior cells hold L = {f > t}. For the
    ell1 family with the 4-stencil the cut value equals the relaxed energy of
    the indicator exactly; Euclidean metrics use Cauchy-Crofton weights and
    Riemannian ones a least-squares fit on the 8-stencil.
    """
    graph = build_cut_graph(problem, t, stencil)
    value, x = _solve_graph(graph)
    if np.any(graph.obstacle & ~x):
        raise RuntimeError("min cut severed an obstacle constraint")
    E = _to_field(problem, graph, x, t)
    if return_value:
        return E, cut_value(graph, x)
    return E


@numba.njit(cache=True)
def _exact_energy(x, ei, ej, ew, src, snk):
    e = 0.0
    for q in range(ei.shape[0]):
        if x[ei[q]] != x[ej[q]]:
            e += ew[q]
    for v in range(x.shape[0]):
        e += snk[v] if x[v] else src[v]
    return e


@numba.njit(cache=True)
def _enumerate(k, free, fixed_x, adj_start, adj_node, adj_w, ei, ej, ew, src, snk, tol, slack):
    """Gray-code walk over the free cells.

    Energies are updated incrementally; any labelling within ``slack`` of
    the best so far is re-evaluated from scratch, so ties are decided on
    exact sums. Returns the minimum and the union of all labellings within
    ``tol`` of it. Labels are uint8, which numba handles faster than bool.
    """
    n = fixed_x.shape[0]
    x = fixed_x.astype(np.uint8)
    for b in range(k):
        x[free[b]] = 0
    best = _exact_energy(x, ei, ej, ew, src, snk)
    e = best
    union = x.copy()
    for i in range(1, 1 << k):
        b = 0
        j = i
        while (j & 1) == 0:
            j >>= 1
            b += 1
        v = free[b]
        xv = x[v]
        d = src[v] - snk[v] if xv else snk[v] - src[v]
        for q in range(adj_start[v], adj_start[v + 1]):
            d += adj_w[q] if x[adj_node[q]] == xv else -adj_w[q]
        x[v] = 1 - xv
        e += d
        if e <= best + slack:
            exact = _exact_energy(x, ei, ej, ew, src, snk)
            if exact < best - tol:
                best = exact
                union[:] = x
            elif exact <= best + tol:
                for u in range(n):
                    union[u] |= x[u]
                best = min(best, exact)
    return best, union


def brute_levelset(problem, t, stencil=4, return_value=False):
    """Exhaustive minimum over all labellings of the unconstrained interior cells.

    Ties resolve to the union of all minimizers, which is itself a minimizer
    (the maximal one) because the perimeter is submodular.
    """
    graph = build_cut_graph(problem, t, stencil)
    free = np.nonzero(~graph.obstacle)[0]
    if len(free) > MAX_BRUTE_CELLS:
        raise SizeError(f"{len(free)} free cells exceed the enumeration limit {MAX_BRUTE_CELLS}")
    fixed = graph.obstacle.copy()
    scale = max(float(graph.edge_w.sum() + graph.source_cap.sum() + graph.sink_cap.sum()), 1e-300)
    n = graph.n_nodes
    ends = np.concatenate([graph.edge_i, graph.edge_j])
    others = np.concatenate([graph.edge_j, graph.edge_i])
    order = np.argsort(ends, kind="stable")
    adj_start = np.zeros(n + 1, dtype=np.int64)
    adj_start[1:] = np.cumsum(np.bincount(ends, minlength=n))
    best, union = _enumerate(
        len(free),
        free.astype(np.int64),
        fixed,
        adj_start,
        others[order].astype(np.int64),
        np.concatenate([graph.edge_w, graph.edge_w])[order],
        graph.edge_i,
        graph.edge_j,
        graph.edge_w,
        graph.source_cap,
        graph.sink_cap,
        1e-12 * scale,
        1e-8 * scale,
    )
    x = union.astype(bool) | graph.obstacle
    E = _to_field(problem, graph, x, t)
    if return_value:
        return E, cut_value(graph, x)
    return E


def nestedness_check(sets):
    """Count cells where a set for a higher threshold leaves its predecessor.

    ``sets`` are ordered by increasing threshold, so each should be contained
    in the one before it.
    """
    per_pair = []
    for lower, upper in zip(sets[:-1], sets[1:]):
        per_pair.append(int(np.sum((np.asarray(upper) > 0) & ~(np.asarray(lower) > 0))))
    return {"violations": int(sum(per_pair)), "per_pair": per_pair}


@dataclass(frozen=True, eq=False)
class StackResult:
    u: np.ndarray
    sets: list
    thresholds: np.ndarray
    violations: int
    values: list


def _pattern_key(problem, graph, t):
    L = np.packbits(problem.f[graph.ext_cell] > t).tobytes()
    O = np.packbits(graph.obstacle).tobytes()
    return L, O


def stack_levelsets(problem, thresholds, stencil=4):
    """Layer-cake reconstruction u = t_0 + sum_j (t_{j+1} - t_j) chi_{E_{t_j}}.

    Each set is intersected with its predecessor before stacking; the number
    of cells removed that way is reported as ``violations``. Cuts are cached
    by their (L, O) pattern, so thresholds between consecutive data values
    cost one max-flow.
    """
    ts = np.asarray(thresholds, dtype=float)
    if ts.ndim != 1 or ts.size == 0 or not np.all(np.isfinite(ts)):
        raise InputError("thresholds must be a non-empty finite list")
    if np.any(np.diff(ts) <= 0):
        raise InputError("thresholds must be strictly increasing")
    cache = {}
    sets, values = [], []
    for t in ts:
        graph = build_cut_graph(problem, t, stencil)
        key = _pattern_key(problem, graph, t)
        if key not in cache:
            value, x = _solve_graph(graph)
            cache[key] = (x, cut_value(graph, x))
        x, val = cache[key]
        sets.append(_to_field(problem, graph, x, t))
        values.append(val)
    violations = nestedness_check(sets)["violations"]
    nested = [sets[0]]
    for E in sets[1:]:
        nested.append(np.minimum(E, nested[-1]))
    u = np.full(problem.grid.shape, ts[0])
    for j in range(len(ts) - 1):
        u += (ts[j + 1] - ts[j]) * nested[j]
    return StackResult(
        u=problem.extend(u),
        sets=nested,
        thresholds=ts,
        violations=violations,
        values=values,
    )
