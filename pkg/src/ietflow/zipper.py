"""Zippered rectangles, the suspension flow and Veech's homological data.

A zippered rectangle is a triple (lambda, pi, delta) with delta in the cone
K(pi) of vectors whose prefix sums are <= 0 while the pi-permuted prefix
sums are >= 0.  Heights and area are derived from delta; the suspension
(vertical) flow moves points up through rectangles, crossing tops via the
base interval exchange.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .errors import NonGeneric, Singular, ValidationError
from .rauzy import (
    MOVE_A,
    MOVE_B,
    IetMap,
    Permutation,
    apply_matrix_inverse,
    apply_matrix_transpose,
    check_irreducible,
    rauzy_move,
)
from .rng import sample_simplex

CONE_TOLERANCE = 1e-12
RANK_THRESHOLD = 1e-10


def validate_cone(perm, delta, tol=CONE_TOLERANCE):
    """True iff delta lies in K(pi) (both prefix-inequality families)."""
    delta = np.asarray(delta, dtype=float)
    m = perm.m
    if delta.shape != (m,):
        raise ValidationError("delta must have m entries")
    prefix = np.cumsum(delta)[: m - 1]
    inv = np.array(perm.inverse_tuple())
    prefix_pi = np.cumsum(delta[inv - 1])[: m - 1]
    return bool(np.all(prefix <= tol) and np.all(prefix_pi >= -tol))


def heights(perm, delta):
    """Heights h_j = -sum_{i<j} delta_i + sum_{l<pi(j)} delta_{pi^-1 l}.

    Returns (h, a) with a_j = -(delta_1 + ... + delta_j).
    """
    delta = np.asarray(delta, dtype=float)
    if not validate_cone(perm, delta):
        raise ValidationError("delta outside the cone K(pi)")
    m = perm.m
    inv = np.array(perm.inverse_tuple())
    prefix = np.concatenate(([0.0], np.cumsum(delta)))
    prefix_pi = np.concatenate(([0.0], np.cumsum(delta[inv - 1])))
    h = np.array([-prefix[j - 1] + prefix_pi[perm(j) - 1] for j in range(1, m + 1)])
    a = -prefix[1:]
    return h, a


@dataclass(frozen=True, eq=False)
class ZipperedRectangle:
    """(lambda, pi, delta) plus derived heights and area."""

    lam: np.ndarray
    perm: Permutation
    delta: np.ndarray
    heights: np.ndarray = field(init=False, repr=False)
    area: float = field(init=False)

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "delta", delta)
        if np.any(lam <= 0):
            raise ValidationError("lambda entries must be positive")
        if not check_irreducible(self.perm):
            raise ValidationError("permutation must be irreducible")
        h, _ = heights(self.perm, delta)
        if np.any(h < -CONE_TOLERANCE):
            raise ValidationError("negative rectangle height")
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "area", float(np.dot(lam, h)))

    @property
    def m(self):
        return self.perm.m

    def base_map(self):
        return IetMap(self.lam, self.perm)

    def to_json(self):
        return json.dumps(
            {
                "lambda": [float(v) for v in self.lam],
                "perm": list(self.perm.images),
                "delta": [float(v) for v in self.delta],
            }
        )

    @staticmethod
    def from_json(text):
        data = json.loads(text)
        return ZipperedRectangle(
            np.array(data["lambda"], dtype=float),
            Permutation(tuple(data["perm"])),
            np.array(data["delta"], dtype=float),
        )


def area(zr):
    """Area = <lambda, h>."""
    return float(np.dot(zr.lam, zr.heights))


def teich_flow(zr, t):
    """Veech's flow P^t (lambda, pi, delta) -> (e^t lambda, pi, e^-t delta)."""
    return ZipperedRectangle(np.exp(t) * zr.lam, zr.perm, np.exp(-t) * zr.delta)


def zr_induction(zr):
    """One step of the map U: (A^-1 lambda, c pi, A^-1 delta), area preserved."""
    m = zr.m
    q = zr.perm.inverse(m)
    lam_q, lam_m = zr.lam[q - 1], zr.lam[m - 1]
    if abs(lam_q - lam_m) <= 1e-14 * max(lam_q, lam_m):
        raise NonGeneric("tie lambda_m == lambda_{pi^-1 m} in zr_induction")
    kind = MOVE_A if lam_q > lam_m else MOVE_B
    lam_new = apply_matrix_inverse(kind, zr.perm, zr.lam)
    delta_new = apply_matrix_inverse(kind, zr.perm, zr.delta)
    return ZipperedRectangle(lam_new, rauzy_move(zr.perm, kind), delta_new)


@dataclass(frozen=True, eq=False)
class HomologyForms:
    """Veech's alternating matrix L^pi with its image/kernel data."""

    perm: Permutation
    L: np.ndarray = field(repr=False)
    rank: int
    genus: int
    H_basis: np.ndarray = field(repr=False)  # (m, rank), orthonormal columns
    N_basis: np.ndarray = field(repr=False)  # (m, m - rank), orthonormal columns
    _L_pinv: np.ndarray = field(repr=False)

    def in_H(self, v, tol=1e-8):
        v = np.asarray(v, dtype=float)
        res = v - self.H_basis @ (self.H_basis.T @ v)
        return bool(np.linalg.norm(res) <= tol * max(1.0, np.linalg.norm(v)))

    def project_H(self, v):
        return self.H_basis @ (self.H_basis.T @ np.asarray(v, dtype=float))

    def form(self, v1, v2):
        """L_pi(v1, v2) = <v1, (L^pi)^-1 v2>, defined modulo N(pi)."""
        return float(np.asarray(v1, dtype=float) @ (self._L_pinv @ np.asarray(v2, dtype=float)))


def veech_forms(perm):
    """Build L^pi, its rank/genus and orthonormal bases of H(pi), N(pi)."""
    if not check_irreducible(perm):
        raise ValidationError("permutation must be irreducible")
    m = perm.m
    L = np.zeros((m, m), dtype=np.int64)
    for i in range(1, m + 1):
        for j in range(1, m + 1):
            if i < j and perm(i) > perm(j):
                L[i - 1, j - 1] = 1
            elif i > j and perm(i) < perm(j):
                L[i - 1, j - 1] = -1
    u, s, vt = np.linalg.svd(L.astype(float))
    rank = int(np.sum(s > RANK_THRESHOLD))
    if rank % 2 != 0:
        raise ValidationError("alternating matrix with odd rank (numerical failure)")
    H_basis = u[:, :rank]
    N_basis = vt[rank:].T
    s_inv = np.where(s > RANK_THRESHOLD, 1.0 / np.where(s > RANK_THRESHOLD, s, 1.0), 0.0)
    L_pinv = (vt.T * s_inv) @ u.T
    return HomologyForms(perm, L, rank, rank // 2, H_basis, N_basis, L_pinv)


@dataclass(frozen=True)
class SurfacePoint:
    """Point on the union of rectangles: horizontal base + vertical fiber."""

    base: float
    fiber: float


def rect_of(zr, base):
    """1-based rectangle index whose base interval contains ``base``."""
    edges = np.cumsum(zr.lam)
    if base < 0 or base >= edges[-1]:
        raise ValidationError("base coordinate outside [0, |lambda|)")
    return int(min(np.searchsorted(edges, base, side="right"), zr.m - 1)) + 1


def validate_point(zr, p):
    r = rect_of(zr, p.base)
    if not 0 <= p.fiber < zr.heights[r - 1]:
        raise ValidationError("fiber outside [0, h_rect)")
    return r


def vertical_flow(zr, p, t, collect=None):
    """Flow the point upward for time t >= 0, crossing tops via the base IET.

    ``collect`` may be a list; (t_elapsed, base, fiber, rect) rows are
    appended at each crossing for trajectory dumps.
    """
    if t < 0:
        raise ValidationError("t must be >= 0")
    r = validate_point(zr, p)
    base_map = zr.base_map()
    discontinuities = np.cumsum(zr.lam)[:-1]
    base, fiber = p.base, p.fiber
    remaining = t
    elapsed = 0.0
    while True:
        head = zr.heights[r - 1] - fiber
        if remaining < head:
            return SurfacePoint(base, fiber + remaining)
        remaining -= head
        elapsed += head
        base = float(base_map.apply(np.array([base]))[0])
        if np.any(base == discontinuities):
            raise Singular("orbit hit a discontinuity at a crossing")
        fiber = 0.0
        r = rect_of(zr, base)
        if collect is not None:
            collect.append((elapsed, base, fiber, r))


def trajectory_csv_rows(zr, p, t):
    """CSV rows (t, base, fiber, rect) for the crossings of a flow segment."""
    rows = [(0.0, p.base, p.fiber, rect_of(zr, p.base))]
    vertical_flow(zr, p, t, collect=rows)
    return rows


def sample_zr(perm, rng, max_tries=100_000, lam=None):
    """Random zippered rectangle: lambda uniform on the simplex (or the
    given lengths), delta by rejection from [-1, 1]^m into K(pi), then
    rescaled to area 1."""
    if lam is None:
        lam = sample_simplex(perm.m, rng)
    for _ in range(max_tries):
        delta = rng.uniform(-1.0, 1.0, size=perm.m)
        if not validate_cone(perm, delta, tol=0.0):
            continue
        h, _ = heights(perm, delta)
        if np.any(h <= 0):
            continue
        zr_area = float(np.dot(lam, h))
        if zr_area <= 1e-12:
            continue
        return ZipperedRectangle(lam, perm, delta / zr_area)
    raise ValidationError("rejection budget exceeded while sampling delta in K(pi)")
