"""Markov compacta generated by Rauzy-Veech expansions.

Each induction move of an expansion yields an oriented graph on the m
interval labels; paths through the graph sequence encode points of [0, 1)
through the Rohlin tower structure of the induction.  Digit k of a path is
an edge of the graph of move k-1 (so a depth-n digit string refines [0, 1)
into the level-n tower floors).  The Vershik successor map in the canonical
edge ordering is conjugate to the interval exchange itself via the coding
map ``digits_to_point``.

Finitely-additive measures on tower arcs are represented by equivariant
(``v(n+1) = A_n v(n)``, A the graph adjacency) or reverse-equivariant
vector sequences; evaluating them on orbit segments goes through the greedy
decomposition of the segment into full tower arcs.
"""

from collections import Counter
from dataclasses import dataclass, field
import weakref

import numpy as np

from .errors import NeedDeeperWindow, Singular, ValidationError
from .rauzy import MOVE_A, IetMap

__all__ = [
    "Edge",
    "MarkovGraph",
    "PathDigits",
    "FinAddMeasure",
    "graph_of_move",
    "coding",
    "point_to_digits",
    "digits_to_point",
    "vershik_map",
    "cylinder_measure",
    "iter_cylinders",
    "orbit_decompose",
    "finadd_arc",
    "finadd_orbit",
    "nu_plus",
    "nu_minus",
    "tower_heights",
]


@dataclass(frozen=True)
class Edge:
    """Oriented edge; initial = deeper-level tower, final = coarser tower."""

    id: int
    initial: int
    final: int

    def __str__(self):
        return "e%d%d" % (self.initial, self.final)


@dataclass(frozen=True, eq=False)
class MarkovGraph:
    """Graph of one induction move, with the canonical Vershik ordering.

    Edges out of a common initial vertex are ordered by their final vertex;
    for one-move graphs this coincides with the return-time order of the
    tower floors.
    """

    m: int
    edges: tuple
    out_edges: tuple = field(repr=False)  # out_edges[i-1]: edges from i, Vershik order
    in_counts: tuple = field(repr=False)

    def adjacency(self):
        A = np.zeros((self.m, self.m), dtype=np.int64)
        for e in self.edges:
            A[e.initial - 1, e.final - 1] += 1
        return A

    def edge_between(self, initial, final):
        for e in self.out_edges[initial - 1]:
            if e.final == final:
                return e
        return None

    def order_key(self, edge):
        """Position of the edge among edges sharing its initial vertex."""
        return self.out_edges[edge.initial - 1].index(edge)

    def is_maximal(self, edge):
        return self.out_edges[edge.initial - 1][-1] is edge or (
            self.out_edges[edge.initial - 1][-1] == edge
        )

    def minimal_from(self, initial):
        return self.out_edges[initial - 1][0]

    def successor(self, edge):
        row = self.out_edges[edge.initial - 1]
        k = row.index(edge)
        if k + 1 >= len(row):
            raise ValidationError("edge %s is maximal" % edge)
        return row[k + 1]


def _build_graph(m, pairs):
    pairs = sorted(pairs)  # (initial, final) lexicographic = Vershik order
    edges = tuple(Edge(i, a, b) for i, (a, b) in enumerate(pairs))
    out = [[] for _ in range(m)]
    in_counts = [0] * m
    for e in edges:
        out[e.initial - 1].append(e)
        in_counts[e.final - 1] += 1
    for row in out:
        row.sort(key=lambda e: e.final)
    if any(not row for row in out) or any(c == 0 for c in in_counts):
        raise ValidationError("graph must have an edge out of and into every vertex")
    return MarkovGraph(m, edges, tuple(tuple(row) for row in out), tuple(in_counts))


def graph_of_move(move):
    """Graph of a Rauzy move; its adjacency is the transpose of move.matrix."""
    perm = move.perm_before
    m = perm.m
    q = perm.inverse(m)
    if move.kind == MOVE_A:
        pairs = [(i, i) for i in range(1, q + 1)]
        pairs.append((q + 1, m))
        pairs.extend((i, i - 1) for i in range(q + 1, m + 1))
    else:
        pairs = [(i, i) for i in range(1, m + 1)]
        pairs.append((q, m))
    return _build_graph(m, pairs)


@dataclass(frozen=True)
class PathDigits:
    """Digits 1..n of a point; digit k is an edge of graph k (move k-1)."""

    digits: tuple

    @property
    def depth(self):
        return len(self.digits)

    def __str__(self):
        return ",".join(str(e) for e in self.digits)


class AdicCoding:
    """Cached per-expansion tables used by the coding and walkers."""

    def __init__(self, log):
        self.log = log
        n = log.n_steps
        self.graphs = [graph_of_move(mv) for mv in log.moves]
        self.lam_un = [log.lam_unnormalized(k) for k in range(n + 1)]
        self.totals = [lam.sum() for lam in self.lam_un]
        self.lefts = [np.concatenate(([0.0], np.cumsum(lam)[:-1])) for lam in self.lam_un]
        self.maps = [IetMap(self.lam_un[k], log.perm_at(k)) for k in range(n + 1)]
        self.int_heights = tower_heights(log)

    @property
    def depth(self):
        return self.log.n_steps

    def interval_index(self, level, x):
        edges = np.cumsum(self.lam_un[level])
        i = int(np.searchsorted(edges, x, side="right"))
        return min(i, self.log.base.m - 1) + 1


_CODING_CACHE = weakref.WeakKeyDictionary()


def coding(log):
    """Memoized AdicCoding for an expansion log."""
    ctx = _CODING_CACHE.get(log)
    if ctx is None:
        ctx = AdicCoding(log)
        _CODING_CACHE[log] = ctx
    return ctx


def tower_heights(log):
    """Exact integer tower heights h[k][i-1] for levels k = 0..n_steps.

    h[0] = (1, ..., 1); h[k] = A_{k-1} h[k-1] with A the graph adjacency
    (transpose of the Rauzy matrix).  Python ints, so arbitrarily deep
    windows stay exact.
    """
    m = log.base.m
    h = [[1] * m]
    for mv in log.moves:
        A = mv.matrix  # heights: h_new[i] = sum_j A^t[i, j] h[j] = sum_j A[j, i] h[j]
        prev = h[-1]
        h.append([sum(int(A[j, i]) * prev[j] for j in range(m)) for i in range(m)])
    return h


def _check_compatible(ctx, digits):
    for k, e in enumerate(digits):
        graph = ctx.graphs[k]
        if graph.edge_between(e.initial, e.final) is None:
            raise ValidationError("digit %d is not an edge of graph %d" % (k + 1, k + 1))
        if k + 1 < len(digits) and digits[k + 1].final != e.initial:
            raise ValidationError("digits %d, %d are incompatible" % (k + 1, k + 2))


def depth_for_resolution(log, eps):
    """Smallest digit depth whose cylinders are narrower than ``eps``.

    Raises NeedDeeperWindow when the expansion does not contract that far.
    """
    scales = log.log_scales
    target = -np.log(eps)
    k = int(np.searchsorted(scales, target, side="right"))
    if k > log.n_steps or scales[-1] <= target:
        raise NeedDeeperWindow(
            "expansion contracts to %.3g only; %.3g requested" % (np.exp(-scales[-1]), eps)
        )
    return k


def point_to_digits(log, x, depth):
    """Digits identifying the tower element containing x at levels 1..depth.

    Raises Singular when the point lands exactly on a tower boundary and
    NeedDeeperWindow when the expansion is shallower than ``depth``.
    """
    ctx = coding(log)
    if depth > ctx.depth:
        raise NeedDeeperWindow("expansion depth %d < requested %d" % (ctx.depth, depth))
    if not 0 <= x < ctx.totals[0]:
        raise ValidationError("x outside [0, |lambda|)")
    digits = []
    current = float(x)
    for j in range(1, depth + 1):
        f_vertex = ctx.interval_index(j - 1, current)
        if current < ctx.totals[j]:
            deeper = current
        else:
            deeper = float(ctx.maps[j - 1].apply_inverse(np.array([current]))[0])
            if not 0.0 <= deeper < ctx.totals[j]:
                raise Singular("inverse landed outside the induced interval at level %d" % j)
        i_vertex = ctx.interval_index(j, deeper)
        edge = ctx.graphs[j - 1].edge_between(i_vertex, f_vertex)
        if edge is None:
            raise Singular("point sits on a tower boundary at level %d" % j)
        digits.append(edge)
        current = deeper
    return PathDigits(tuple(digits))


def digits_to_point(log, digits, offset_frac=0.0):
    """The coding map p: point of the cylinder J(digits) at the given
    fractional offset (0 = left endpoint) of the cylinder width.

    Inverse (up to cylinder width) of ``point_to_digits``.  The ascent is
    carried out from the cylinder midpoint, which stays safely inside the
    continuity pieces of every level map; the cylinder maps rigidly, so the
    requested offset is restored by a final shift.
    """
    ctx = coding(log)
    d = digits.digits
    if len(d) > ctx.depth:
        raise NeedDeeperWindow("digits deeper than the expansion")
    _check_compatible(ctx, d)
    if not 0.0 <= offset_frac < 1.0:
        raise ValidationError("offset_frac must lie in [0, 1)")
    if not d:
        return offset_frac * ctx.totals[0]
    n = len(d)
    width = float(ctx.lam_un[n][d[n - 1].initial - 1])
    z = float(ctx.lefts[n][d[n - 1].initial - 1]) + 0.5 * width
    for j in range(n, 0, -1):
        k = ctx.graphs[j - 1].order_key(d[j - 1])
        for _ in range(k):
            z = float(ctx.maps[j - 1].apply(np.array([z]))[0])
    return z + (offset_frac - 0.5) * width


def point_to_digits_batch(log, xs, depth):
    """Vectorized point_to_digits: one descent per level for all points.

    Returns a list of PathDigits; level-by-level numpy work makes the
    10^4-point acceptance oracle run in well under a second.
    """
    ctx = coding(log)
    if depth > ctx.depth:
        raise NeedDeeperWindow("expansion depth %d < requested %d" % (ctx.depth, depth))
    xs = np.asarray(xs, dtype=float)
    if np.any(xs < 0) or np.any(xs >= ctx.totals[0]):
        raise ValidationError("points outside [0, |lambda|)")
    n = xs.size
    current = xs.copy()
    all_edges = []
    for j in range(1, depth + 1):
        edges_prev = np.cumsum(ctx.lam_un[j - 1])
        edges_this = np.cumsum(ctx.lam_un[j])
        f_vertex = np.minimum(np.searchsorted(edges_prev, current, side="right"), ctx.log.base.m - 1) + 1
        deeper = current.copy()
        outside = current >= ctx.totals[j]
        if np.any(outside):
            deeper[outside] = ctx.maps[j - 1].apply_inverse(current[outside])
            if np.any(deeper[outside] >= ctx.totals[j]) or np.any(deeper[outside] < 0):
                raise Singular("inverse landed outside the induced interval at level %d" % j)
        i_vertex = np.minimum(np.searchsorted(edges_this, deeper, side="right"), ctx.log.base.m - 1) + 1
        graph = ctx.graphs[j - 1]
        level_edges = []
        for a, b in zip(i_vertex, f_vertex):
            e = graph.edge_between(int(a), int(b))
            if e is None:
                raise Singular("point sits on a tower boundary at level %d" % j)
            level_edges.append(e)
        all_edges.append(level_edges)
        current = deeper
    return [PathDigits(tuple(all_edges[j][i] for j in range(depth))) for i in range(n)]


def digits_to_point_batch(log, digits_list):
    """Vectorized coding map for many digit strings of equal depth."""
    ctx = coding(log)
    if not digits_list:
        return np.array([])
    depth = digits_list[0].depth
    if any(d.depth != depth for d in digits_list):
        raise ValidationError("batch requires equal depths")
    if depth == 0:
        return np.zeros(len(digits_list))
    idx_deep = np.array([d.digits[depth - 1].initial - 1 for d in digits_list])
    widths = np.asarray(ctx.lam_un[depth])[idx_deep]
    z = np.asarray(ctx.lefts[depth])[idx_deep] + 0.5 * widths
    for j in range(depth, 0, -1):
        graph = ctx.graphs[j - 1]
        ks = np.array([graph.order_key(d.digits[j - 1]) for d in digits_list])
        apply_mask = ks >= 1
        # one-move graphs have at most two outgoing edges, so k is 0 or 1
        if np.any(ks > 1):
            raise ValidationError("unexpected edge order key > 1")
        if np.any(apply_mask):
            z[apply_mask] = ctx.maps[j - 1].apply(z[apply_mask])
    return z - 0.5 * widths


def cylinder_measure(log, digits):
    """Lebesgue measure of the cylinder: un-normalized lambda at the deepest
    level, indexed by the initial vertex of the last digit."""
    ctx = coding(log)
    d = digits.digits
    if not d:
        return 1.0
    if len(d) > ctx.depth:
        raise NeedDeeperWindow("digits deeper than the expansion")
    _check_compatible(ctx, d)
    return float(ctx.lam_un[len(d)][d[-1].initial - 1])


def iter_cylinders(log, depth):
    """All compatible digit strings of the given depth (deterministic order)."""
    ctx = coding(log)
    if depth > ctx.depth:
        raise NeedDeeperWindow("expansion too shallow")
    if depth == 0:
        yield PathDigits(())
        return
    stack = [(e,) for e in ctx.graphs[0].edges]
    for level in range(2, depth + 1):
        graph = ctx.graphs[level - 1]
        stack = [prefix + (e,) for prefix in stack for e in graph.edges if e.final == prefix[-1].initial]
    for d in stack:
        yield PathDigits(d)


class _Walker:
    """Mutable digit string with position bookkeeping and adic advancing."""

    def __init__(self, ctx, digits):
        _check_compatible(ctx, digits.digits)
        self.ctx = ctx
        self.digits = list(digits.digits)
        self.positions = [ctx.graphs[k].order_key(e) for k, e in enumerate(self.digits)]

    def snapshot(self):
        return PathDigits(tuple(self.digits))

    def vertex_at(self, level):
        """Tower index of the current point at the given level (0 = base interval)."""
        if level == 0:
            return self.digits[0].final if self.digits else None
        return self.digits[level - 1].initial

    def base_minimal_through(self, level):
        return all(p == 0 for p in self.positions[:level])

    def advance(self, level):
        """Move forward by one full level-``level`` tower (adic carry at level+1)."""
        ctx = self.ctx
        j = level  # 0-based index of the digit at level level+1
        while True:
            if j >= len(self.digits):
                raise NeedDeeperWindow("all digits maximal within the window")
            graph = ctx.graphs[j]
            edge = self.digits[j]
            row = graph.out_edges[edge.initial - 1]
            k = self.positions[j]
            if k + 1 < len(row):
                new_edge = row[k + 1]
                self.digits[j] = new_edge
                self.positions[j] = k + 1
                break
            j += 1
        # refill everything below with minimal compatible edges
        for i in range(j - 1, -1, -1):
            target = self.digits[i + 1].final
            e = ctx.graphs[i].minimal_from(target)
            self.digits[i] = e
            self.positions[i] = 0

    def point(self):
        return digits_to_point(self.ctx.log, self.snapshot())


def vershik_map(log, digits):
    """Adic successor of a digit string (conjugate to the interval exchange)."""
    ctx = coding(log)
    walker = _Walker(ctx, digits)
    walker.advance(0)
    return walker.snapshot()


def _greedy_decompose(walker, N, on_arc=None):
    """Largest-level-first greedy; mutates the walker to the segment's end."""
    ctx = walker.ctx
    arcs = Counter()
    remaining = int(N)
    h = ctx.int_heights
    if remaining > 0 and not walker.digits:
        raise NeedDeeperWindow("empty digit window")
    while remaining > 0:
        level = 0
        # climb while at a tower base and the next tower still fits
        while (
            level < len(walker.digits)
            and walker.positions[level] == 0
            and h[level + 1][walker.digits[level].initial - 1] <= remaining
        ):
            level += 1
        vertex = walker.vertex_at(level)
        if on_arc is not None:
            on_arc(level, vertex, walker)
        arcs[(level, vertex)] += 1
        remaining -= h[level][vertex - 1]
        walker.advance(level)
    return sorted((lvl, v, c) for (lvl, v), c in arcs.items())


def orbit_decompose(log, digits, N):
    """Decompose {x, Tx, ..., T^{N-1}x} into full tower arcs.

    Greedy largest-level-first; returns [(level, vertex, count)] sorted by
    (level, vertex), with sum(count * h[level][vertex]) == N exactly.
    Raises NeedDeeperWindow when the digit window is exhausted mid-walk;
    callers that own the expansion should use :func:`decompose_from_point`,
    which extends the window automatically.
    """
    if N < 0:
        raise ValidationError("N must be >= 0")
    walker = _Walker(coding(log), digits)
    return _greedy_decompose(walker, N)


def advance_digits(log, digits, N):
    """Digits of T^N x given the digits of x (exact integer bookkeeping)."""
    walker = _Walker(coding(log), digits)
    _greedy_decompose(walker, N)
    return walker.snapshot()


def decompose_from_point(log, x, N, max_depth=4096, extend_step=64):
    """orbit_decompose with automatic window extension.

    Returns ``(log, digits, arcs)`` where ``log`` may be an extension of the
    input; capped at ``max_depth`` induction steps.
    """
    while True:
        digits = point_to_digits(log, x, log.n_steps)
        try:
            return log, digits, orbit_decompose(log, digits, N)
        except NeedDeeperWindow:
            if log.n_steps + extend_step > max_depth:
                raise
            log = log.extend(extend_step)


@dataclass(frozen=True, eq=False)
class FinAddMeasure:
    """Finitely-additive measure given by an (reverse-)equivariant sequence.

    direction 'plus':  v(n+1) = A_n v(n)   (tower-arc measures, e.g. nu+);
    direction 'minus': v(n)   = A_n^t v(n+1) (transverse measures, e.g. nu-).
    """

    direction: str
    vectors: tuple
    norm: float

    @staticmethod
    def from_initial(log, v0, direction="plus"):
        from .rauzy import apply_matrix_inverse, apply_matrix_transpose

        v0 = np.asarray(v0, dtype=float)
        vectors = [v0]
        for mv in log.moves:
            if direction == "plus":
                vectors.append(apply_matrix_transpose(mv.kind, mv.perm_before, vectors[-1]))
            elif direction == "minus":
                # v(n+1) = (A_n^t)^-1 v(n); transports like the length vector
                vectors.append(apply_matrix_inverse(mv.kind, mv.perm_before, vectors[-1]))
            else:
                raise ValidationError("direction must be 'plus' or 'minus'")
        return FinAddMeasure(direction, tuple(vectors), float(np.abs(v0).sum()))

    @property
    def window(self):
        return len(self.vectors) - 1

    def value(self, level, vertex):
        if not 0 <= level <= self.window:
            raise ValidationError("level %d outside stored window [0, %d]" % (level, self.window))
        return float(self.vectors[level][vertex - 1])


def nu_plus(log):
    """The counting measure on tower arcs (heights sequence, v0 = ones)."""
    return FinAddMeasure.from_initial(log, np.ones(log.base.m), "plus")


def nu_minus(log):
    """The transverse Lebesgue measure (lengths sequence, v0 = lambda).

    Reads the renormalized lengths off the expansion log: the raw
    subtractive transport of lambda hits the absolute roundoff floor once
    the lengths decay below 1e-16, while (normalized lengths) * exp(-scale)
    stays accurate at any depth.
    """
    vectors = tuple(log.lam_unnormalized(k) for k in range(log.n_steps + 1))
    return FinAddMeasure("minus", vectors, float(np.abs(log.base.lam).sum()))


def finadd_arc(measure, level, vertex):
    """Measure of one full level-n tower arc with base in interval ``vertex``."""
    return measure.value(level, vertex)


def finadd_orbit(measure, log, digits, N):
    """Measure of the orbit segment {x, ..., T^{N-1} x} via arc decomposition."""
    arcs = orbit_decompose(log, digits, N)
    return float(sum(measure.value(level, vertex) * count for level, vertex, count in arcs))
