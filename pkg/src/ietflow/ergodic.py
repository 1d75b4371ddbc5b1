"""Ergodic sums and integrals, their finitely-additive approximation, and
the empirical limit theorem.

The slow path is always direct iteration (``birkhoff_sum``,
``ergodic_integral_direct``); every fast evaluator here (tower recursion,
orbit decomposition, lockstep Monte Carlo) is cross-checked against it in
the test suite.
"""

from dataclasses import dataclass, field

import numpy as np

from . import adic
from ._plsum import PiecewiseLinear, TowerSums
from .errors import NeedDeeperWindow, ValidationError
from .rauzy import IetMap, apply_matrix_inverse, apply_matrix_transpose, expansion, iet_apply
from .zipper import rect_of

FIBER_POLYNOMIAL = "fiber_polynomial"
BASE_INDICATOR = "base_indicator_smoothed"
CUSTOM_TABLE = "custom_table"

DEFAULT_SMOOTHING = 1e-3


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Weakly Lipschitz test function on the surface (or its base).

    ``fiber_polynomial``: params is an (m, d+1) coefficient array; on
    rectangle i at fiber height u the value is sum_d params[i, d] u^d
    (constant along the base inside each rectangle).

    ``base_indicator_smoothed``: params = (a, b, w); piecewise-linear
    mollified indicator of [a, b), ramp width w, constant in the fiber.

    ``custom_table``: params = (xs, ys); piecewise-linear interpolation in
    the base coordinate, constant in the fiber.

    ``shift`` is subtracted everywhere (used to center the mean).
    """

    kind: str
    params: tuple
    shift: float = 0.0
    lipw_norm: float = field(default=0.0)

    __test__ = False  # pytest: not a test class

    def __post_init__(self):
        if self.kind not in (FIBER_POLYNOMIAL, BASE_INDICATOR, CUSTOM_TABLE):
            raise ValidationError("unknown test function kind %r" % (self.kind,))

    # -- base-coordinate view (fiber 0) ---------------------------------
    def base_profile(self, lam):
        """PiecewiseLinear profile of x -> f(x, fiber=0) on [0, |lambda|)."""
        lam = np.asarray(lam, dtype=float)
        total = float(lam.sum())
        if self.kind == FIBER_POLYNOMIAL:
            coeffs = np.asarray(self.params, dtype=float)
            values = coeffs[:, 0] - self.shift
            return _step_profile(lam, values)
        if self.kind == BASE_INDICATOR:
            a, b, w = self.params
            xs = [0.0, a, a + w, b - w, b, total]
            ys = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0]
            xs, ys = _dedupe_nodes(xs, ys)
            return PiecewiseLinear(xs, np.asarray(ys) - self.shift)
        xs, ys = self.params
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float) - self.shift
        if xs[0] > 0.0 or xs[-1] < total:
            raise ValidationError("custom table must cover [0, |lambda|]")
        return PiecewiseLinear(xs, ys)

    # -- fiber structure over a zippered rectangle -----------------------
    def crossing_profile(self, zr):
        """PL profile of y -> integral of f over one full crossing above y."""
        lam = zr.lam
        if self.kind == FIBER_POLYNOMIAL:
            coeffs = np.asarray(self.params, dtype=float)
            g = np.array(
                [
                    sum(c * zr.heights[i] ** (d + 1) / (d + 1) for d, c in enumerate(coeffs[i]))
                    - self.shift * zr.heights[i]
                    for i in range(zr.m)
                ]
            )
            return _step_profile(lam, g)
        base = self.base_profile(lam)
        return _scale_per_interval(base, lam, zr.heights)

    def fiber_partial(self, zr, rect, u1, u2):
        """integral of f(y, u) du over [u1, u2) inside one rectangle
        (vectorized over u1/u2 for fixed rect arrays)."""
        rect = np.asarray(rect)
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        if self.kind == FIBER_POLYNOMIAL:
            coeffs = np.asarray(self.params, dtype=float)
            out = -self.shift * (u2 - u1)
            for d in range(coeffs.shape[1]):
                out = out + coeffs[rect - 1, d] * (u2 ** (d + 1) - u1 ** (d + 1)) / (d + 1)
            return out
        raise ValidationError("fiber_partial with a base-coordinate function needs a base point")

    def fiber_partial_at(self, zr, y, u1, u2):
        """Vectorized partial fiber integral at explicit base points."""
        y = np.asarray(y, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        if self.kind == FIBER_POLYNOMIAL:
            edges = np.cumsum(zr.lam)
            rect = np.minimum(np.searchsorted(edges, y, side="right"), zr.m - 1) + 1
            return self.fiber_partial(zr, rect, u1, u2)
        profile = self.base_profile(zr.lam)
        return profile(y) * (u2 - u1)

    def mean_zero(self, lam):
        """Copy with the base-profile mean subtracted (Lebesgue on [0,|lam|))."""
        profile = self.base_profile(lam)
        mean = profile.integral() / profile.total
        return TestFunction(self.kind, self.params, self.shift + mean, self.lipw_norm)

    def mean_zero_flow(self, zr):
        """Copy centered for the area form of the suspension: the integral
        of f over the surface (= integral of the crossing profile) is 0."""
        mass = self.crossing_profile(zr).integral()
        return TestFunction(self.kind, self.params, self.shift + mass / zr.area, self.lipw_norm)

    def estimate_lipw(self, lam):
        """sup|f| plus the total variation of the base profile (crude but
        honest upper-bound flavored estimate of the weak-Lipschitz norm)."""
        profile = self.base_profile(lam)
        tv = float(np.abs(np.diff(profile.ys)).sum())
        return float(np.max(np.abs(profile.ys))) + tv


def _dedupe_nodes(xs, ys):
    out_x, out_y = [], []
    for x, y in zip(xs, ys):
        if out_x and x <= out_x[-1] + 1e-15:
            continue
        out_x.append(float(x))
        out_y.append(float(y))
    return np.array(out_x), np.array(out_y)


def _step_profile(lam, values):
    """Piecewise-constant-per-interval profile as a PL function with steep
    ramps of negligible width at the interval edges."""
    edges = np.concatenate(([0.0], np.cumsum(lam)))
    ramp = float(min(lam.min(), 1.0)) * 1e-9
    xs, ys = [0.0], [float(values[0])]
    for i in range(1, len(lam)):
        xs.extend([edges[i] - ramp, edges[i]])
        ys.extend([float(values[i - 1]), float(values[i])])
    xs.append(edges[-1])
    ys.append(float(values[-1]))
    return PiecewiseLinear(np.array(xs), np.array(ys))


def _scale_per_interval(profile, lam, factors):
    """PL profile multiplied by a per-interval constant factor."""
    edges = np.concatenate(([0.0], np.cumsum(lam)))
    xs = np.union1d(profile.xs, edges)
    idx = np.clip(np.searchsorted(edges, xs, side="right") - 1, 0, len(lam) - 1)
    ys = profile(xs) * np.asarray(factors, dtype=float)[idx]
    # re-insert tight double nodes at interior edges so the factor jumps stay sharp
    ramp = float(min(lam.min(), 1.0)) * 1e-9
    add_x, add_y = [], []
    for i in range(1, len(lam)):
        e = edges[i]
        add_x.append(e - ramp)
        add_y.append(float(profile(e - ramp)) * float(factors[i - 1]))
    xs2 = np.concatenate([xs, add_x])
    ys2 = np.concatenate([ys, add_y])
    order = np.argsort(xs2)
    xs2, ys2 = xs2[order], ys2[order]
    keep = np.concatenate(([True], np.diff(xs2) > 0))
    return PiecewiseLinear(xs2[keep], ys2[keep])


# ---------------------------------------------------------------------------
# direct (oracle) evaluators
# ---------------------------------------------------------------------------

def birkhoff_sum(iet, f, x, N):
    """Direct O(N) Birkhoff sum of the base profile; the slow oracle."""
    if N < 0:
        raise ValidationError("N must be >= 0")
    profile = f.base_profile(iet.lam) if isinstance(f, TestFunction) else f
    mp = IetMap(iet.lam, iet.perm)
    total = 0.0
    z = np.array([float(x)])
    for _ in range(int(N)):
        total += float(profile(z[0]))
        z = mp.apply(z)
    return total


def ergodic_integral_direct(zr, f, p, T):
    """Direct crossing-by-crossing flow integral; the slow flow oracle."""
    if T < 0:
        raise ValidationError("T must be >= 0")
    mp = IetMap(zr.lam, zr.perm)
    y, u = float(p.base), float(p.fiber)
    r = rect_of(zr, y)
    remaining = float(T)
    total = 0.0
    while True:
        head = float(zr.heights[r - 1]) - u
        if remaining < head:
            total += float(f.fiber_partial_at(zr, y, u, u + remaining))
            return total
        total += float(f.fiber_partial_at(zr, y, u, zr.heights[r - 1]))
        remaining -= head
        y = float(mp.apply(np.array([y]))[0])
        u = 0.0
        r = rect_of(zr, y)


# ---------------------------------------------------------------------------
# fast evaluators: tower recursion + orbit decomposition
# ---------------------------------------------------------------------------

import weakref

_TOWER_CACHE = weakref.WeakKeyDictionary()


def _tower_sums(log, owner, label, profile):
    """Per-(expansion, function, label) cache of tower sums; the owner is
    pinned inside the entry so id reuse cannot alias."""
    ctx = adic.coding(log)
    per_ctx = _TOWER_CACHE.setdefault(ctx, {})
    key = (id(owner), label)
    entry = per_ctx.get(key)
    if entry is None or entry[0] is not owner:
        entry = (owner, TowerSums(ctx, profile))
        per_ctx[key] = entry
    return entry[1]


def tower_integrals(log, f, level):
    """Birkhoff sums of f over one full level-n tower per base interval.

    Component i sums f along the tower with base I^(n)_i, started at the
    left endpoint.  Exact piecewise-linear recursion level by level.
    """
    if level > log.n_steps:
        raise NeedDeeperWindow("level beyond the expansion")
    profile = f.base_profile(log.base.lam) if isinstance(f, TestFunction) else f
    sums = _tower_sums(log, f, "base", profile)
    return sums.vector(level)


def birkhoff_profile(iet, f, x, N_values, log=None, max_depth=4096):
    """S_N f(x) at each requested N via arc decomposition (exact).

    Returns (values, log); the expansion is extended as needed.
    """
    N_values = [int(n) for n in N_values]
    if any(n < 0 for n in N_values):
        raise ValidationError("N must be >= 0")
    n_max = max(N_values) if N_values else 0
    if log is None:
        log = expansion(iet, 256)
    profile = f.base_profile(iet.lam) if isinstance(f, TestFunction) else f
    while True:
        try:
            digits0 = adic.point_to_digits(log, float(x), log.n_steps)
            sums = _tower_sums(log, f, "base", profile)
            ctx = adic.coding(log)
            out = []
            for n in N_values:
                walker = adic._Walker(ctx, digits0)
                total = 0.0
                current = [float(x)]

                # advancing past a full level-l tower applies the induced
                # map at level l to the tracked point: one exact level-l
                # translation, no deep-digit arithmetic involved
                def on_arc(level, vertex, w):
                    nonlocal total
                    offset = current[0] - float(ctx.lefts[level][vertex - 1])
                    total += sums.value(level, vertex, offset)
                    current[0] = float(ctx.maps[level].apply(np.array([current[0]]))[0])

                adic._greedy_decompose(walker, n, on_arc=on_arc)
                out.append(total)
            return np.array(out), log
        except NeedDeeperWindow:
            if log.n_steps >= max_depth:
                raise
            log = log.extend(min(max_depth - log.n_steps, max(128, log.n_steps)))


def birkhoff_sum_fast(iet, f, x, N, log=None):
    """Fast S_N f(x); see :func:`birkhoff_profile`."""
    values, _ = birkhoff_profile(iet, f, x, [N], log=log)
    return float(values[0])


# ---------------------------------------------------------------------------
# pairing with dual vectors, expansion coefficients
# ---------------------------------------------------------------------------

def transport_dual(log, dual0, level):
    """Reverse-equivariant transport of a dual vector to a deeper level."""
    v = np.asarray(dual0, dtype=float)
    for k in range(level):
        mv = log.moves[k]
        v = apply_matrix_inverse(mv.kind, mv.perm_before, v)
    return v


def pair_with_dual_series(f, log, frame, levels, window=800):
    """<Phi_f, dual2> estimates at several levels (stabilization check).

    The dual vector is re-anchored at each level (see
    :func:`ietflow.spectrum.dual_frame_at`); naive transport of a level-0
    dual is unstable whenever theta_2 < theta_1 / 2.
    """
    from .spectrum import dual_frame_at

    out = []
    for n in levels:
        if log.n_steps < n + window:
            log = log.extend(n + window - log.n_steps)
        sums = tower_integrals(log, f, n)
        _, dual, log = dual_frame_at(log, frame, n, window=window)
        out.append(float(np.dot(sums, dual)))
    return np.array(out)


def _default_pair_level(log, teich_time=14.0):
    scales = log.log_scales
    k = int(np.searchsorted(scales, teich_time, side="right"))
    return min(max(k, 2), log.n_steps - 2)


def pair_with_dual(f, log, frame, level=None, warn_tol=0.05):
    """m_{Phi_2^-}(f): tower integrals paired with the transported dual2.

    Stabilizes in the level; a relative change above ``warn_tol`` between
    level and level+2 flags non-stabilization via a warning.
    """
    if level is None:
        level = _default_pair_level(log)
    if level + 2 > log.n_steps:
        raise NeedDeeperWindow("need two more levels to check stabilization")
    values = pair_with_dual_series(f, log, frame, [level, level + 2])
    scale = max(abs(values[1]), 1e-9)
    if abs(values[1] - values[0]) / scale > warn_tol and max(np.abs(values)) > 1e-9:
        import warnings

        warnings.warn(
            "pairing not stabilized: %.3g vs %.3g at levels %d, %d"
            % (values[0], values[1], level, level + 2),
            RuntimeWarning,
        )
    return float(values[1])


def integral_against_lebesgue(f, log, level=None):
    """integral of f d(Lebesgue), via tower sums against the length vector."""
    if level is None:
        level = _default_pair_level(log)
    sums = tower_integrals(log, f, level)
    lam = log.lam_unnormalized(level)
    return float(np.dot(sums, lam))


def phi_f_expansion(f, log, frame, level=None):
    """Leading coefficients (c1, c2) of the ergodic-sum expansion:
    S_N f(x) ~ c1 * N + c2 * Phi_2(x, N)."""
    c1 = integral_against_lebesgue(f, log, level=level)
    c2 = pair_with_dual(f, log, frame, level=level)
    return c1, c2


def phi_f_expansion_flow(zr, f, log, frame, level=None):
    """Leading coefficients of the flow-integral expansion:
    int_0^T f(h_t x) dt ~ c1 * T + c2 * Phi_2(x, T).

    The flow pairing runs over crossing-integrated arc values (the level-0
    arc of the suspension carries the full fiber integral of f, not the
    pointwise base value), so c2 here differs from the discrete-time one.
    """
    crossing = f.crossing_profile(zr)
    profile = _rescale_profile(crossing, float(zr.lam.sum()))
    c1 = integral_against_lebesgue(profile, log, level=level)
    c2 = pair_with_dual(profile, log, frame, level=level)
    return c1, c2


def phi2_orbit(log, frame, x, N, max_depth=4096):
    """Phi_2(x, N) over the discrete orbit, via the arc decomposition."""
    log2, digits, arcs = adic.decompose_from_point(log, float(x), int(N), max_depth=max_depth)
    measure = adic.FinAddMeasure.from_initial(log2, frame.v2, "plus")
    return float(sum(measure.value(lvl, v) * c for lvl, v, c in arcs)), log2


# ---------------------------------------------------------------------------
# deviation exponents
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DeviationReport:
    slope: float
    slope_plain: float
    table: np.ndarray  # rows: N, S_N, running max |S|
    degenerate: bool


def deviation_exponent_aligned(iet, f, N_min, N_max, log=None):
    """Deviation slope measured at renormalization return times.

    The limsup in the deviation law is attained along tower arcs, so the
    unbiased desk-scale estimator regresses log max_i |sum of f over the
    level-n tower i| against log of the tower height, over the levels whose
    heights fall in [N_min, N_max].  A uniform N-grid mixes the O(1)
    small-arc floor into the fit and biases the slope down.
    """
    if log is None:
        log = expansion(iet, 512)
    ctx_heights = None
    while True:
        h = adic.coding(log).int_heights
        if max(h[-1]) > N_max:
            break
        log = log.extend(max(128, log.n_steps))
    h = adic.coding(log).int_heights
    rows = []
    for n in range(1, log.n_steps + 1):
        hn = max(h[n])
        if hn < N_min:
            continue
        if min(h[n]) > N_max:
            break
        vec = tower_integrals(log, f, n)
        i = int(np.argmax(np.abs(vec)))
        if N_min <= h[n][i] <= N_max:
            rows.append((float(h[n][i]), float(abs(vec[i]))))
    rows = np.array(rows)
    if len(rows) < 4:
        raise ValidationError("fewer than 4 usable levels in [N_min, N_max]")
    runmax = np.maximum.accumulate(rows[:, 1])
    degenerate = bool(np.max(rows[:, 1]) < 1e-9)
    if degenerate:
        return DeviationReport(0.0, 0.0, np.column_stack([rows[:, 0], rows[:, 1], runmax]), True)
    slope = float(np.polyfit(np.log(rows[:, 0]), np.log(np.maximum(runmax, 1e-300)), 1)[0])
    good = rows[:, 1] > 0
    slope_plain = float(np.polyfit(np.log(rows[good, 0]), np.log(rows[good, 1]), 1)[0])
    return DeviationReport(slope, slope_plain, np.column_stack([rows[:, 0], rows[:, 1], runmax]), False)


def deviation_exponent(iet, f, x, N_grid, log=None):
    """Log-log slope of the running maximum of |S_N f| over the grid.

    The running max is the limsup proxy (primary slope); the plain
    regression on |S_N| is reported alongside.
    """
    N_grid = sorted(int(n) for n in N_grid)
    if len(N_grid) < 2 or N_grid[0] < 1:
        raise ValidationError("N_grid must contain at least two positive sizes")
    values, log = birkhoff_profile(iet, f, x, N_grid, log=log)
    absvals = np.abs(values)
    runmax = np.maximum.accumulate(absvals)
    degenerate = bool(np.max(absvals) < 1e-9)
    logN = np.log(np.array(N_grid, dtype=float))
    if degenerate:
        return DeviationReport(0.0, 0.0, np.column_stack([N_grid, values, runmax]), True)
    slope = float(np.polyfit(logN, np.log(np.maximum(runmax, 1e-300)), 1)[0])
    safe = absvals > 0
    slope_plain = float(np.polyfit(logN[safe], np.log(absvals[safe]), 1)[0])
    return DeviationReport(slope, slope_plain, np.column_stack([N_grid, values, runmax]), False)


# ---------------------------------------------------------------------------
# flow integrals (structural evaluator)
# ---------------------------------------------------------------------------

def _real_heights(log, zr, depth):
    """Crossing times of full level-k towers for the suspension over zr."""
    h = [np.asarray(zr.heights, dtype=float)]
    for k in range(depth):
        mv = log.moves[k]
        h.append(apply_matrix_transpose(mv.kind, mv.perm_before, h[-1]))
    return h


def ergodic_integral(zr, f, p, T, log=None, max_depth=4096):
    """Flow integral int_0^T f(h_t p) dt via base-crossing reduction.

    Partial top/bottom fiber segments are exact; the full-crossing part is
    decomposed into tower arcs evaluated with the exact PL recursion.
    """
    if T < 0:
        raise ValidationError("T must be >= 0")
    y, u = float(p.base), float(p.fiber)
    r = rect_of(zr, y)
    head = float(zr.heights[r - 1]) - u
    if T < head:
        return float(f.fiber_partial_at(zr, y, u, u + T))
    total = float(f.fiber_partial_at(zr, y, u, zr.heights[r - 1]))
    mp = IetMap(zr.lam, zr.perm)
    y1 = float(mp.apply(np.array([y]))[0])
    remaining = float(T) - head
    if log is None:
        log = expansion(_unit_iet(zr), 256)
    crossing = f.crossing_profile(zr)
    while True:
        try:
            value, y_end, log = _flow_sum(zr, crossing, f, log, y1, remaining)
            return total + value
        except NeedDeeperWindow:
            if log.n_steps >= max_depth:
                raise
            log = log.extend(min(max_depth - log.n_steps, max(128, log.n_steps)))


def _unit_iet(zr):
    from .rauzy import Iet

    return Iet(zr.lam / zr.lam.sum(), zr.perm)


def _flow_sum(zr, crossing, f, log, y_start, T):
    """Full crossings worth sum + final partial from base point y_start."""
    ctx = adic.coding(log)
    scale = zr.lam.sum()
    x = y_start / scale  # expansion runs over the normalized base
    digits = adic.point_to_digits(log, x, log.n_steps)
    h_real = _real_heights(log, zr, log.n_steps)
    sums = _tower_sums(log, f, "crossing-%g" % scale, _rescale_profile(crossing, scale))
    walker = adic._Walker(ctx, digits)
    remaining = float(T)
    total = 0.0
    current = float(x)
    while True:
        if not walker.digits:
            raise NeedDeeperWindow("empty window")
        vertex0 = walker.vertex_at(0)
        if remaining < h_real[0][vertex0 - 1]:
            break
        level = 0
        while (
            level < len(walker.digits)
            and walker.positions[level] == 0
            and h_real[level + 1][walker.digits[level].initial - 1] <= remaining
        ):
            level += 1
        vertex = walker.vertex_at(level)
        offset = current - float(ctx.lefts[level][vertex - 1])
        total += sums.value(level, vertex, offset)
        remaining -= h_real[level][vertex - 1]
        walker.advance(level)
        current = float(ctx.maps[level].apply(np.array([current]))[0])
    y_end = current * scale
    total += float(f.fiber_partial_at(zr, y_end, 0.0, remaining))
    return total, y_end, log


def _rescale_profile(profile, scale):
    """Profile re-parametrized from [0, |lambda|) to the normalized base."""
    if abs(scale - 1.0) < 1e-15:
        return profile
    return PiecewiseLinear(profile.xs / scale, profile.ys)


# ---------------------------------------------------------------------------
# lockstep Monte Carlo samplers
# ---------------------------------------------------------------------------

def sample_surface_points(zr, n_samples, rng):
    """Area-uniform points: base uniform, fiber by rejection under the roof."""
    h_max = float(np.max(zr.heights))
    total = float(zr.lam.sum())
    edges = np.cumsum(zr.lam)
    ys = np.empty(n_samples)
    us = np.empty(n_samples)
    filled = 0
    while filled < n_samples:
        need = n_samples - filled
        y = rng.uniform(0.0, total, size=2 * need + 8)
        u = rng.uniform(0.0, h_max, size=y.size)
        rect = np.minimum(np.searchsorted(edges, y, side="right"), zr.m - 1)
        ok = u < zr.heights[rect]
        take = min(need, int(ok.sum()))
        ys[filled : filled + take] = y[ok][:take]
        us[filled : filled + take] = u[ok][:take]
        filled += take
    return ys, us


def sample_flow_and_cocycle(zr, f, v2_values, s, tau_grid, n_samples, rng):
    """Joint lockstep samples of the ergodic integral S[f](x, tau e^s) and
    the cocycle Phi_2(x, tau e^s) over the same area-uniform starts.

    Returns (S_matrix, Phi_matrix), each (n_samples, len(tau_grid)).
    Partial crossings contribute exactly to S and are dropped for Phi_2
    (forward-window truncation of the cocycle).
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    times = tau_grid * np.exp(s)
    y0, u0 = sample_surface_points(zr, n_samples, rng)
    crossing = f.crossing_profile(zr)

    def s_partial(y, dt, u_start):
        u1 = u_start if u_start is not None else np.zeros_like(dt)
        return f.fiber_partial_at(zr, y, u1, u1 + dt)

    s_vals, phi_vals = _lockstep_flow_exact(
        zr, times, y0, u0, crossing, np.asarray(v2_values, dtype=float), s_partial
    )
    return s_vals, phi_vals


def _lockstep_flow_exact(zr, times, y0, u0, crossing, v2_values, s_partial):
    times = np.asarray(times, dtype=float)
    n = y0.size
    edges = np.cumsum(zr.lam)
    heights = np.asarray(zr.heights, dtype=float)
    mp = IetMap(zr.lam, zr.perm)
    trans = mp.trans
    m = zr.m

    out_s = np.zeros((n, times.size))
    out_phi = np.zeros((n, times.size))
    run_s = np.zeros(n)
    run_phi = np.zeros(n)

    # Partial crossings: exact for the integral; the cocycle gets the
    # time-proportional share of the level-0 arc value (the forward window
    # cannot resolve sub-crossing arcs; linear crediting centers the
    # truncation error of the dropped remainders).
    rect = np.minimum(np.searchsorted(edges, y0, side="right"), m - 1)
    dt_head = heights[rect] - u0
    t = np.zeros(n)
    y = y0.copy()
    for j, c in enumerate(times):
        hit = c <= dt_head
        if np.any(hit):
            out_s[hit, j] = s_partial(y[hit], np.full(int(hit.sum()), c), u0[hit])
            out_phi[hit, j] = v2_values[rect[hit]] * (c / heights[rect[hit]])
    run_s += s_partial(y, dt_head, u0)
    run_phi += v2_values[rect] * (dt_head / heights[rect])
    t = dt_head.copy()
    y = y + trans[rect]

    t_max = float(times.max())
    active = t < t_max
    while np.any(active):
        rect = np.minimum(np.searchsorted(edges, y, side="right"), m - 1)
        dt = heights[rect]
        new_t = t + dt
        for j, c in enumerate(times):
            crossed = active & (t < c) & (new_t >= c)
            if np.any(crossed):
                partial = s_partial(y[crossed], c - t[crossed], np.zeros(int(crossed.sum())))
                out_s[crossed, j] = run_s[crossed] + partial
                out_phi[crossed, j] = run_phi[crossed] + v2_values[rect[crossed]] * (
                    (c - t[crossed]) / dt[crossed]
                )
        g_now = crossing(y)
        run_s[active] += g_now[active]
        run_phi[active] += v2_values[rect[active]]
        y[active] = y[active] + trans[rect[active]]
        t[active] = new_t[active]
        active = t < t_max
    return out_s, out_phi


# ---------------------------------------------------------------------------
# empirical distributions and the limit theorem
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Weighted sample set over a tau grid with CDF queries."""

    samples: np.ndarray  # (n, len(tau_grid))
    tau_grid: np.ndarray
    mean: float
    variance: float

    @staticmethod
    def from_samples(samples, tau_grid):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        tau_grid = np.asarray(tau_grid, dtype=float)
        one = int(np.argmin(np.abs(tau_grid - 1.0)))
        col = samples[:, one]
        return EmpiricalDistribution(samples, tau_grid, float(col.mean()), float(col.var()))

    def marginal(self, tau):
        j = int(np.argmin(np.abs(self.tau_grid - tau)))
        return np.sort(self.samples[:, j])

    def cdf(self, tau, x):
        vals = self.marginal(tau)
        return float(np.searchsorted(vals, x, side="right")) / vals.size


def ks_distance(d1, d2):
    """Two-sample Kolmogorov-Smirnov distance; the maximum over the tau grid
    of the per-marginal sup-CDF differences."""
    if d1.samples.size == 0 or d2.samples.size == 0:
        raise ValidationError("empty sample sets")
    taus = d1.tau_grid
    worst = 0.0
    for j, tau in enumerate(taus):
        a = np.sort(d1.samples[:, j])
        b = d2.marginal(tau)
        allv = np.concatenate([a, b])
        ca = np.searchsorted(a, allv, side="right") / a.size
        cb = np.searchsorted(b, allv, side="right") / b.size
        worst = max(worst, float(np.max(np.abs(ca - cb))))
    return worst


def empirical_limit_distribution(zr, f, s, n_samples, tau_grid, rng):
    """Distribution of the normalized ergodic integral over random starts.

    Normalization divides by the sample standard deviation of the tau = 1
    marginal (so the variance there is 1 by construction).
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    s_vals, _ = sample_flow_and_cocycle(zr, f, np.zeros(zr.m), s, tau_grid, n_samples, rng)
    one = int(np.argmin(np.abs(tau_grid - 1.0)))
    sd = float(s_vals[:, one].std())
    if sd <= 0:
        raise ValidationError("degenerate variance; is m_{Phi_2^-}(f) nonzero?")
    return EmpiricalDistribution.from_samples(s_vals / sd, tau_grid)


def cocycle_distribution(log, frame, s, n_samples, tau_grid, rng, zr=None):
    """Distribution of the normalized second cocycle Phi_2(x, tau e^s).

    ``zr`` fixes the suspension (crossing times); without it the discrete
    suspension with unit heights over the base exchange is used.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    if zr is None:
        zr = _unit_suspension(log.base)
    v2 = np.asarray(frame.v2, dtype=float)
    zero_f = TestFunction(FIBER_POLYNOMIAL, tuple(map(tuple, np.zeros((zr.m, 1)))))
    _, phi_vals = sample_flow_and_cocycle(zr, zero_f, v2, s, tau_grid, n_samples, rng)
    one = int(np.argmin(np.abs(tau_grid - 1.0)))
    sd = float(phi_vals[:, one].std())
    if sd <= 0:
        raise ValidationError("degenerate cocycle variance")
    return EmpiricalDistribution.from_samples(phi_vals / sd, tau_grid)


def _unit_suspension(iet):
    """Suspension with constant height 1 over a unit interval exchange."""
    from .zipper import ZipperedRectangle

    m = iet.m
    # delta = 0 gives heights 0; build heights directly instead
    zr = ZipperedRectangle.__new__(ZipperedRectangle)
    object.__setattr__(zr, "lam", iet.lam.copy())
    object.__setattr__(zr, "perm", iet.perm)
    object.__setattr__(zr, "delta", np.zeros(m))
    object.__setattr__(zr, "heights", np.ones(m))
    object.__setattr__(zr, "area", float(iet.lam.sum()))
    return zr


def variance_growth(zr, f, s_grid, n_samples, rng, frame, log, pair_level=None):
    """Empirical variance of the ergodic integral against the prediction
    (c2 |Phi_2| H_2(s))^2 * Vhat(s), with Vhat from the cocycle variance.

    Returns rows (s, var_S, H2, var_phi2, prediction, ratio); the cocycle
    and integral samples share starts (common random numbers).
    """
    from .spectrum import log_h2_profile

    s_grid = np.asarray(s_grid, dtype=float)
    c1, c2 = phi_f_expansion_flow(zr, f, log, frame, level=pair_level)
    if abs(c2) < 1e-12:
        raise ValidationError("m_{Phi_2^-}(f) = 0; the variance prediction needs c2 != 0")
    logh2, log = log_h2_profile(_unit_iet(zr), frame, s_grid, log=log)
    norm_v2 = float(np.linalg.norm(frame.v2))
    rows = []
    for s, lh2 in zip(s_grid, logh2):
        child = np.random.default_rng(rng.integers(0, 2**63 - 1))
        s_vals, phi_vals = sample_flow_and_cocycle(
            zr, f, frame.v2, float(s), np.array([1.0]), n_samples, child
        )
        var_s = float(s_vals[:, 0].var())
        var_phi = float(phi_vals[:, 0].var())
        h2 = np.exp(lh2)
        vhat = var_phi / (norm_v2 * h2) ** 2
        prediction = (c2 * norm_v2 * h2) ** 2 * vhat
        rows.append((float(s), var_s, float(h2), var_phi, prediction, var_s / prediction))
    return np.array(rows), log
