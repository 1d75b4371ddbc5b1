"""Permutation combinatorics and Rauzy-Veech induction for interval exchanges.

Conventions used throughout the package:

* permutations are maps ``pi`` of {1..m}, stored as the tuple
  ``(pi(1), ..., pi(m))``;
* an interval exchange ``T`` on [0, 1) has intervals ``I_i = [beta_i,
  beta_{i+1})`` of lengths ``lambda_i``, rearranged in the order
  ``I_{pi^-1 1}, ..., I_{pi^-1 m}``;
* one induction step applies the move ``a`` when
  ``lambda_{pi^-1 m} > lambda_m`` and ``b`` when ``lambda_m >
  lambda_{pi^-1 m}``, replacing ``lambda`` by ``A(c, pi)^-1 lambda`` and
  renormalizing to unit total length.  The exact tie is rejected as
  :class:`~ietflow.errors.NonGeneric`.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import hashlib
import json

import numpy as np

from .errors import NonGeneric, ValidationError

TIE_TOLERANCE = 1e-14

MOVE_A = "a"
MOVE_B = "b"


@dataclass(frozen=True)
class Permutation:
    """An irreducible permutation of {1..m}; images[j-1] = pi(j+...)."""

    images: tuple

    def __post_init__(self):
        m = len(self.images)
        if m == 0 or sorted(self.images) != list(range(1, m + 1)):
            raise ValidationError("images must be a bijection of 1..m, got %r" % (self.images,))

    @property
    def m(self):
        return len(self.images)

    def __call__(self, j):
        return self.images[j - 1]

    def inverse(self, value):
        """j such that pi(j) == value."""
        return self.images.index(value) + 1

    def inverse_tuple(self):
        inv = [0] * self.m
        for j, v in enumerate(self.images, start=1):
            inv[v - 1] = j
        return tuple(inv)

    def to_line(self):
        return " ".join(str(v) for v in self.images)

    @staticmethod
    def from_line(line):
        return Permutation(tuple(int(tok) for tok in line.split()))

    def __str__(self):
        return self.to_line()


def check_irreducible(perm) -> bool:
    """True iff no proper prefix {1..k}, k < m, is invariant under pi."""
    seen_max = 0
    for k, v in enumerate(perm.images, start=1):
        seen_max = max(seen_max, v)
        if seen_max == k and k < perm.m:
            return False
    return True


def _require_irreducible(perm):
    if not check_irreducible(perm):
        raise ValidationError("permutation %s is reducible" % perm)


def rauzy_move(perm, kind):
    """Apply the Rauzy operation ``a`` or ``b`` to an irreducible permutation."""
    _require_irreducible(perm)
    m = perm.m
    if kind == MOVE_A:
        q = perm.inverse(m)
        images = []
        for j in range(1, m + 1):
            if j <= q:
                images.append(perm(j))
            elif j == q + 1:
                images.append(perm(m))
            else:
                images.append(perm(j - 1))
    elif kind == MOVE_B:
        pm = perm(m)
        images = []
        for j in range(1, m + 1):
            pj = perm(j)
            if pj <= pm:
                images.append(pj)
            elif pj < m:
                images.append(pj + 1)
            else:
                images.append(pm + 1)
    else:
        raise ValidationError("kind must be 'a' or 'b', got %r" % (kind,))
    return Permutation(tuple(images))


@lru_cache(maxsize=None)
def _rauzy_matrix_cached(kind, images):
    perm = Permutation(images)
    m = perm.m
    q = perm.inverse(m)
    A = np.zeros((m, m), dtype=np.int64)
    if kind == MOVE_A:
        for i in range(1, q + 1):
            A[i - 1, i - 1] = 1
        A[m - 1, q] += 1  # E^{m, q+1}
        for i in range(q, m):
            A[i - 1, i] += 1  # E^{i, i+1}
    else:
        A = np.eye(m, dtype=np.int64)
        A[m - 1, q - 1] += 1  # E^{m, q}
    A.setflags(write=False)
    return A


def rauzy_matrix(kind, perm):
    """The unimodular matrix A(kind, pi); lambda_old = A lambda_new."""
    _require_irreducible(perm)
    if kind not in (MOVE_A, MOVE_B):
        raise ValidationError("kind must be 'a' or 'b', got %r" % (kind,))
    return _rauzy_matrix_cached(kind, perm.images)


def apply_matrix_inverse(kind, perm, vec):
    """A(kind, pi)^-1 vec, via exact index formulas (no linear solve)."""
    m = perm.m
    q = perm.inverse(m)
    v = np.asarray(vec, dtype=float)
    out = np.empty_like(v)
    if kind == MOVE_A:
        out[: q - 1] = v[: q - 1]
        out[q - 1] = v[q - 1] - v[m - 1]
        out[q] = v[m - 1]
        out[q + 1 :] = v[q : m - 1]
    else:
        out[:] = v
        out[m - 1] = v[m - 1] - v[q - 1]
    return out


def apply_matrix(kind, perm, vec_or_frame):
    """A(kind, pi) v; also accepts an (m, k) frame."""
    m = perm.m
    q = perm.inverse(m)
    v = np.asarray(vec_or_frame, dtype=float)
    out = np.empty_like(v)
    if kind == MOVE_A:
        out[: q - 1] = v[: q - 1]
        out[q - 1] = v[q - 1] + v[q]
        out[q : m - 1] = v[q + 1 :]
        out[m - 1] = v[q]
    else:
        out[:] = v
        out[m - 1] = v[m - 1] + v[q - 1]
    return out


def apply_matrix_transpose(kind, perm, vec_or_frame):
    """A(kind, pi)^t v; also accepts an (m, k) frame."""
    m = perm.m
    q = perm.inverse(m)
    v = np.asarray(vec_or_frame, dtype=float)
    out = np.empty_like(v)
    if kind == MOVE_A:
        out[: q - 1] = v[: q - 1]
        out[q - 1] = v[q - 1]
        out[q] = v[q - 1] + v[m - 1]
        out[q + 1 :] = v[q : m - 1]
    else:
        out[:] = v
        out[q - 1] = v[q - 1] + v[m - 1]
    return out


def rauzy_class(perm):
    """Closure of {perm} under the moves a, b (BFS, deterministic order)."""
    _require_irreducible(perm)
    seen = {perm.images}
    order = [perm]
    queue = [perm]
    while queue:
        current = queue.pop(0)
        for kind in (MOVE_A, MOVE_B):
            nxt = rauzy_move(current, kind)
            if nxt.images not in seen:
                seen.add(nxt.images)
                order.append(nxt)
                queue.append(nxt)
    return order


@dataclass(frozen=True, eq=False)
class Iet:
    """Unit-length interval exchange (lambda, pi)."""

    lam: np.ndarray
    perm: Permutation

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        object.__setattr__(self, "lam", lam)
        if lam.ndim != 1 or lam.size != self.perm.m:
            raise ValidationError("lambda must have one entry per interval")
        if np.any(lam <= 0):
            raise ValidationError("interval lengths must be positive")
        if abs(lam.sum() - 1.0) > 1e-12:
            raise ValidationError("interval lengths must sum to 1 (got %.17g)" % lam.sum())
        _require_irreducible(self.perm)

    @property
    def m(self):
        return self.perm.m

    def breakpoints(self):
        """beta_1=0 < beta_2 < ... < beta_m (left endpoints of I_1..I_m)."""
        return np.concatenate(([0.0], np.cumsum(self.lam)[:-1]))

    def image_breakpoints(self):
        """Left endpoints of the rearranged intervals I^pi_1..I^pi_m."""
        inv = self.perm.inverse_tuple()
        lam_img = self.lam[np.array(inv) - 1]
        return np.concatenate(([0.0], np.cumsum(lam_img)[:-1]))

    def translations(self):
        """t_i such that T(x) = x + t_i on I_i."""
        beta = self.breakpoints()
        beta_img = self.image_breakpoints()
        return np.array([beta_img[self.perm(i) - 1] - beta[i - 1] for i in range(1, self.m + 1)])


def interval_index(lam, x):
    """1-based index i with x in I_i = [beta_i, beta_{i+1}), lengths lam."""
    edges = np.cumsum(lam)
    i = int(np.searchsorted(edges, x, side="right")) + 1
    return min(i, len(lam))


def iet_apply(iet, x):
    """T(x) = x + beta^pi_{pi i} - beta_i for x in I_i (half-open convention)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x >= 1.0):
        raise ValidationError("x must lie in [0, 1)")
    trans = iet.translations()
    edges = np.cumsum(iet.lam)
    idx = np.minimum(np.searchsorted(edges, x, side="right"), iet.m - 1)
    return x + trans[idx]


def iet_apply_inverse(iet, y):
    """T^-1(y); inverse of iet_apply on [0, 1)."""
    y = np.asarray(y, dtype=float)
    inv = np.array(iet.perm.inverse_tuple())
    lam_img = iet.lam[inv - 1]
    trans = iet.translations()
    edges_img = np.cumsum(lam_img)
    pos = np.minimum(np.searchsorted(edges_img, y, side="right"), iet.m - 1)
    idx = inv[pos] - 1
    return y - trans[idx]


@dataclass(frozen=True, eq=False)
class RauzyMove:
    """One induction move: kind, permutations before/after, matrix A(kind, pi)."""

    kind: str
    perm_before: Permutation
    perm_after: Permutation
    matrix: np.ndarray = field(repr=False)

    def adjacency(self):
        """Incidence matrix of the associated graph; equals matrix^t."""
        return self.matrix.T


def _make_move(kind, perm):
    return RauzyMove(kind, perm, rauzy_move(perm, kind), rauzy_matrix(kind, perm))


def induction_step(iet):
    """One step of Rauzy-Veech induction.

    Returns ``(next_iet, move, roof)`` with ``roof = -log|A^-1 lambda|``;
    raises :class:`NonGeneric` on the tie ``lambda_m == lambda_{pi^-1 m}``.
    """
    lam, perm = iet.lam, iet.perm
    m = perm.m
    q = perm.inverse(m)
    lam_q, lam_m = lam[q - 1], lam[m - 1]
    if abs(lam_q - lam_m) <= TIE_TOLERANCE:
        raise NonGeneric("tie lambda_m == lambda_{pi^-1 m} (= %.17g)" % lam_m)
    kind = MOVE_A if lam_q > lam_m else MOVE_B
    move = _make_move(kind, perm)
    lam_new = apply_matrix_inverse(kind, perm, lam)
    total = lam_new.sum()
    roof = -np.log(total)
    return Iet(lam_new / total, move.perm_after), move, roof


@dataclass(frozen=True, eq=False)
class ExpansionLog:
    """Record of n induction steps applied to a base interval exchange.

    ``lambdas[k]`` is the normalized length vector after k moves (lambdas[0]
    is the base), ``log_scales[k] = sum(roof_values[:k])`` so that the
    un-normalized lengths after k moves are ``lambdas[k] * exp(-log_scales[k])``.
    Immutable once built; ``extend`` returns a deeper log.
    """

    base: Iet
    moves: tuple
    lambdas: tuple
    roof_values: np.ndarray = field(repr=False)
    log_scales: np.ndarray = field(repr=False)

    @property
    def n_steps(self):
        return len(self.moves)

    def perm_at(self, k):
        """Permutation after k moves (k = 0 is the base)."""
        if k == 0:
            return self.base.perm
        return self.moves[k - 1].perm_after

    def lam_normalized(self, k):
        return self.lambdas[k]

    def lam_unnormalized(self, k):
        return self.lambdas[k] * np.exp(-self.log_scales[k])

    def iet_at(self, k):
        return Iet(self.lambdas[k], self.perm_at(k))

    def extend(self, n_extra):
        """A new log continuing this one by ``n_extra`` further moves."""
        if n_extra <= 0:
            return self
        tail = expansion(self.iet_at(self.n_steps), n_extra)
        moves = self.moves + tail.moves
        lambdas = self.lambdas + tail.lambdas[1:]
        roofs = np.concatenate([self.roof_values, tail.roof_values])
        scales = np.concatenate([self.log_scales, self.log_scales[-1] + tail.log_scales[1:]])
        return ExpansionLog(self.base, moves, lambdas, roofs, scales)

    def cache_key(self):
        payload = self.base.lam.tobytes() + self.base.perm.to_line().encode() + str(self.n_steps).encode()
        return hashlib.sha256(payload).hexdigest()

    def to_json(self):
        return json.dumps(
            {
                "version": 1,
                "base_lambda": [float(v).hex() for v in self.base.lam],
                "base_perm": self.base.perm.to_line(),
                "moves": "".join(mv.kind for mv in self.moves),
            }
        )

    @staticmethod
    def from_json(text):
        data = json.loads(text)
        if data.get("version") != 1:
            raise ValidationError("unsupported expansion cache version")
        base = Iet(
            np.array([float.fromhex(v) for v in data["base_lambda"]]),
            Permutation.from_line(data["base_perm"]),
        )
        # Replay the recorded moves; induction is deterministic so this
        # reproduces the original log bit-for-bit.
        replay = expansion(base, len(data["moves"]))
        if "".join(mv.kind for mv in replay.moves) != data["moves"]:
            raise ValidationError("cached move sequence does not match replay")
        return replay


def expansion(iet, n_steps):
    """Run ``n_steps`` of induction; NonGeneric at step k carries k."""
    lambdas = [iet.lam]
    moves = []
    roofs = []
    current = iet
    for k in range(n_steps):
        try:
            current, move, roof = induction_step(current)
        except NonGeneric as exc:
            raise NonGeneric("tie at induction step %d" % k, step=k) from exc
        moves.append(move)
        lambdas.append(current.lam)
        roofs.append(roof)
    roofs = np.asarray(roofs, dtype=float)
    scales = np.concatenate(([0.0], np.cumsum(roofs)))
    return ExpansionLog(iet, tuple(moves), tuple(lambdas), roofs, scales)


class IetMap:
    """Cached arrays for repeated application of one interval exchange.

    Works on an interval of arbitrary total length (un-normalized levels of
    an expansion use total < 1).
    """

    def __init__(self, lam, perm):
        self.lam = np.asarray(lam, dtype=float)
        self.perm = perm
        self.m = perm.m
        self.total = self.lam.sum()
        self.edges = np.cumsum(self.lam)
        self.left = np.concatenate(([0.0], self.edges[:-1]))
        inv = np.array(perm.inverse_tuple())
        lam_img = self.lam[inv - 1]
        self.edges_img = np.cumsum(lam_img)
        left_img = np.concatenate(([0.0], self.edges_img[:-1]))
        # translation on I_i: x -> x + trans[i-1]
        self.trans = np.array([left_img[perm(i) - 1] - self.left[i - 1] for i in range(1, self.m + 1)])
        self.inv_order = inv  # original index of the k-th image interval

    def index(self, x):
        """1-based interval index of x (vectorized)."""
        i = np.searchsorted(self.edges, x, side="right")
        return np.minimum(i, self.m - 1) + 1

    def apply(self, x):
        idx = np.searchsorted(self.edges, x, side="right")
        idx = np.minimum(idx, self.m - 1)
        return x + self.trans[idx]

    def apply_inverse(self, y):
        pos = np.searchsorted(self.edges_img, y, side="right")
        pos = np.minimum(pos, self.m - 1)
        return y - self.trans[self.inv_order[pos] - 1]

    def image_index(self, y):
        """1-based ORIGINAL interval index i such that y lies in T(I_i)."""
        pos = np.searchsorted(self.edges_img, y, side="right")
        pos = int(np.minimum(pos, self.m - 1))
        return int(self.inv_order[pos])


def window_product(log, start, stop):
    """Exact integer product A(c_start,pi_start) ... A(c_{stop-1}, pi_{stop-1}).

    Computed with arbitrary-precision Python ints (dtype=object), so window
    products never overflow regardless of depth.
    """
    if not 0 <= start <= stop <= log.n_steps:
        raise ValidationError("window [%d, %d) outside expansion of depth %d" % (start, stop, log.n_steps))
    m = log.base.m
    prod = np.eye(m, dtype=object)
    for k in range(start, stop):
        prod = prod @ log.moves[k].matrix.astype(object)
    return prod
