"""Exact piecewise-linear Birkhoff-sum machinery over Rohlin towers.

A continuous piecewise-linear integrand on the base interval stays
piecewise linear after summation along a tower: the sum over the floors of
a level-n tower, as a function of the basepoint offset inside the tower's
base subinterval, is again piecewise linear, and its breakpoints are the
(at most B, globally) pullbacks of the integrand's breakpoints.  This
gives O(levels * (m + B)) evaluation of Birkhoff sums over full towers at
any depth, exact up to roundoff.
"""

import bisect

import numpy as np


class PiecewiseLinear:
    """Continuous piecewise-linear function on [0, total]."""

    def __init__(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ValueError("xs must be strictly increasing with >= 2 nodes")
        if ys.shape != xs.shape:
            raise ValueError("xs and ys must match")
        self.xs = xs
        self.ys = ys

    @property
    def total(self):
        return float(self.xs[-1])

    def __call__(self, x):
        return np.interp(x, self.xs, self.ys)

    def integral(self):
        """Exact integral over the whole domain (trapezoid on the nodes)."""
        return float(np.trapezoid(self.ys, self.xs))

    def shifted(self, c):
        return PiecewiseLinear(self.xs, self.ys + c)

    def slope_at(self, x):
        """Right-slope at x (vectorized)."""
        idx = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)
        dx = self.xs[idx + 1] - self.xs[idx]
        return (self.ys[idx + 1] - self.ys[idx]) / dx

    def interior_breaks(self, lo, hi):
        """Breakpoints strictly inside (lo, hi)."""
        mask = (self.xs > lo) & (self.xs < hi)
        return self.xs[mask]


class _Segmented:
    """One tower sum S(u), u in [0, width): value at 0, internal breaks,
    per-segment slopes, and cumulative values at the breaks."""

    __slots__ = ("width", "v0", "breaks", "slopes", "cumvals")

    def __init__(self, width, v0, breaks, slopes):
        self.width = width
        self.v0 = v0
        self.breaks = breaks  # sorted, strictly inside (0, width)
        self.slopes = slopes  # len(breaks) + 1 entries
        cum = [v0]
        prev = 0.0
        for b, s in zip(breaks, slopes):
            cum.append(cum[-1] + s * (b - prev))
            prev = b
        self.cumvals = cum  # value at 0 and at each break

    def eval(self, u):
        if u <= 0.0:
            return self.v0
        k = bisect.bisect_right(self.breaks, u)
        prev = self.breaks[k - 1] if k > 0 else 0.0
        return self.cumvals[k] + self.slopes[k] * (u - prev)

    def slope(self, u):
        k = bisect.bisect_right(self.breaks, u)
        return self.slopes[k]


def _base_segment(profile, left, width):
    """Level-0 tower sum: the restriction u -> f(left + u)."""
    v0 = float(profile(left))
    inner = profile.interior_breaks(left, left + width) - left
    breaks = [float(b) for b in inner]
    slopes = [float(profile.slope_at(left + (b_prev + b) / 2.0)) for b_prev, b in
              zip([0.0] + breaks, breaks + [width])]
    return _Segmented(width, v0, breaks, slopes)


def _concatenate(parts, width):
    """Sum of shifted segments: S(u) = sum_k parts[k](delta_k + u)."""
    v0 = 0.0
    breaks = set()
    eps = width * 1e-12  # breaks hugging an endpoint carry no information
    for seg, delta in parts:
        v0 += seg.eval(delta)
        for b in seg.breaks:
            rel = b - delta
            if eps < rel < width - eps:
                breaks.add(rel)
    breaks = sorted(breaks)
    slopes = []
    for lo, hi in zip([0.0] + breaks, breaks + [width]):
        mid = (lo + hi) / 2.0
        slopes.append(sum(seg.slope(delta + mid) for seg, delta in parts))
    return _Segmented(width, v0, breaks, slopes)


class TowerSums:
    """Per-level, per-vertex tower sums of a piecewise-linear integrand.

    Level n, vertex i holds S(u) = sum over the floors of the level-n tower
    with base I^(n)_i of the integrand, as a function of the basepoint
    offset u inside that base subinterval.  Levels are built lazily.
    """

    def __init__(self, ctx, profile):
        self.ctx = ctx  # AdicCoding
        self.profile = profile
        m = ctx.log.base.m
        self.levels = [
            [_base_segment(profile, float(ctx.lefts[0][i]), float(ctx.lam_un[0][i])) for i in range(m)]
        ]

    def _extend_to(self, n):
        ctx = self.ctx
        while len(self.levels) <= n:
            k = len(self.levels)  # build level k from level k-1
            prev = self.levels[k - 1]
            graph = ctx.graphs[k - 1]
            mp = ctx.maps[k - 1]
            level = []
            for i in range(1, ctx.log.base.m + 1):
                width = float(ctx.lam_un[k][i - 1])
                # advance the subinterval through its return orbit by its
                # midpoint: left endpoints sit exactly on continuity-piece
                # boundaries and misround, midpoints stay safely interior
                z_mid = float(ctx.lefts[k][i - 1]) + 0.5 * width
                parts = []
                for e in graph.out_edges[i - 1]:
                    delta = (z_mid - 0.5 * width) - float(ctx.lefts[k - 1][e.final - 1])
                    seg = prev[e.final - 1]
                    # clamp roundoff: the shifted window must fit the segment
                    delta = min(max(delta, 0.0), max(0.0, seg.width - width))
                    parts.append((seg, delta))
                    z_mid = float(mp.apply(np.array([z_mid]))[0])
                level.append(_concatenate(parts, width))
            self.levels.append(level)

    def value(self, n, vertex, offset=0.0):
        """S^(n)_vertex(offset); offset clamped into [0, width)."""
        if n >= len(self.levels):
            if n > self.ctx.depth:
                raise IndexError("level beyond the expansion window")
            self._extend_to(n)
        seg = self.levels[n][vertex - 1]
        u = min(max(offset, 0.0), seg.width)
        return seg.eval(u)

    def vector(self, n):
        """All vertices at one level, evaluated at the left endpoints."""
        if n >= len(self.levels):
            self._extend_to(n)
        return np.array([seg.v0 for seg in self.levels[n]])
