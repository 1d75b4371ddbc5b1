"""Lyapunov analysis of the induction cocycle restricted to H(pi).

The transpose matrices A(c, pi)^t of an expansion form a cocycle that
preserves the family of subspaces H(pi) (image of Veech's alternating
matrix).  Its exponents, normalized by accumulated roof values so that the
top one equals 1, are the deviation exponents of the interval exchange;
the second unstable direction v2 generates the fluctuation measure used by
the ergodic-integral experiments.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateGap, NonGeneric, ValidationError
from .rauzy import (
    MOVE_A,
    MOVE_B,
    Permutation,
    apply_matrix,
    apply_matrix_transpose,
    expansion,
)
from .zipper import veech_forms

TIME_SCALE_INDUCTION = "induction"
TIME_SCALE_TEICHMULLER = "teichmuller"

_QR_EVERY = 20


@lru_cache(maxsize=None)
def _forms_cached(images):
    return veech_forms(Permutation(images))


@lru_cache(maxsize=None)
def _move_tables(images):
    """(q, images_a, images_b) for one permutation; the induction hot loop
    avoids rebuilding Permutation objects."""
    from .rauzy import rauzy_move

    p = Permutation(images)
    q = p.inverse(p.m)
    return q, rauzy_move(p, MOVE_A).images, rauzy_move(p, MOVE_B).images


@dataclass(frozen=True, eq=False)
class LyapunovReport:
    exponents: np.ndarray
    raw_exponents: np.ndarray
    n_steps: int
    time_scale: str
    perm_class: Permutation
    subspace_dim: int
    convergence_trace: np.ndarray = field(repr=False)  # rows: step, time, theta_1.., theta_2g
    total_roof: float
    warning: bool

    def to_dict(self):
        return {
            "exponents": [float(v) for v in self.exponents],
            "raw_exponents": [float(v) for v in self.raw_exponents],
            "n_steps": int(self.n_steps),
            "time_scale": self.time_scale,
            "perm": self.perm_class.to_line(),
            "subspace_dim": int(self.subspace_dim),
            "total_roof": float(self.total_roof),
            "warning": bool(self.warning),
        }


def _qr_accumulate(frame, logs):
    q, r = np.linalg.qr(frame)
    diag = np.diag(r)
    signs = np.where(diag < 0, -1.0, 1.0)
    q = q * signs
    logs += np.log(np.abs(diag))
    return q


def lyapunov_spectrum(iet, n_steps, time_scale=TIME_SCALE_TEICHMULLER, trace_points=200):
    """QR-reorthonormalized exponents of the A^t cocycle on H(pi).

    In the ``teichmuller`` scale the accumulated stretch is divided by the
    total roof time, which makes the top exponent 1; ``induction`` divides
    by the step count.
    """
    if time_scale not in (TIME_SCALE_INDUCTION, TIME_SCALE_TEICHMULLER):
        raise ValidationError("time_scale must be 'induction' or 'teichmuller'")
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    forms = _forms_cached(iet.perm.images)
    dim = forms.rank
    frame = forms.H_basis.copy()
    logs = np.zeros(dim)
    lam = iet.lam.copy()
    images = iet.perm.images
    m = iet.perm.m
    total_roof = 0.0
    trace_every = max(1, n_steps // max(1, trace_points))
    trace = []
    for step in range(n_steps):
        q, images_a, images_b = _move_tables(images)
        lam_q, lam_m = lam[q - 1], lam[m - 1]
        if abs(lam_q - lam_m) <= 1e-14:
            raise NonGeneric("tie at induction step %d" % step, step=step)
        if lam_q > lam_m:
            kind = MOVE_A
            lam_new = np.concatenate((lam[: q - 1], [lam_q - lam_m, lam_m], lam[q : m - 1]))
            images = images_a
        else:
            kind = MOVE_B
            lam_new = lam.copy()
            lam_new[m - 1] = lam_m - lam_q
            images = images_b
        # frame update v -> A^t v via index rules
        if kind == MOVE_A:
            frame = np.concatenate(
                (frame[: q - 1], frame[q - 1 : q], frame[q - 1 : q] + frame[m - 1 : m], frame[q : m - 1])
            )
        else:
            frame = frame.copy()
            frame[q - 1] += frame[m - 1]
        total = lam_new.sum()
        total_roof -= np.log(total)
        lam = lam_new / total
        if (step + 1) % _QR_EVERY == 0 or step + 1 == n_steps:
            frame = _qr_accumulate(frame, logs)
        if (step + 1) % trace_every == 0 or step + 1 == n_steps:
            denom = total_roof if time_scale == TIME_SCALE_TEICHMULLER else float(step + 1)
            trace.append(np.concatenate(([step + 1, total_roof], logs / denom)))
    raw = np.sort(logs / n_steps)[::-1]
    denom = total_roof if time_scale == TIME_SCALE_TEICHMULLER else float(n_steps)
    exponents = np.sort(logs / denom)[::-1]
    trace = np.asarray(trace)
    warning = False
    if len(trace) >= 10:
        tail = trace[-len(trace) // 10 :, 2:]
        warning = bool(np.any(np.ptp(tail, axis=0) > 0.1))
    return LyapunovReport(
        exponents=exponents,
        raw_exponents=raw,
        n_steps=n_steps,
        time_scale=time_scale,
        perm_class=iet.perm,
        subspace_dim=dim,
        convergence_trace=trace,
        total_roof=total_roof,
        warning=warning,
    )


@dataclass(frozen=True, eq=False)
class OseledetsFrame:
    """Top-two unstable/dual directions of the restricted cocycle at level 0.

    v1 is the exact positive equivariant vector (all ones for the
    discrete-time tower structure), v2 spans the second unstable direction
    inside H(pi); dual1 is the length vector lambda, dual2 the second dual
    direction.  Normalized to <v_i, dual_j> = delta_ij.
    """

    level: int
    v1: np.ndarray
    v2: np.ndarray
    dual1: np.ndarray
    dual2: np.ndarray
    biorth_residual: float
    gap_ratio: float

    def pairing_matrix(self):
        vs = [self.v1, self.v2]
        ds = [self.dual1, self.dual2]
        return np.array([[float(np.dot(v, d)) for d in ds] for v in vs])


def _right_singular_frame(log, n_steps, dim, basis_at):
    """Right singular frame at level 0 of the H-restricted window product.

    Pushes the full coordinate frame backward through the transposed
    coordinate matrices M_k^t = B_k^t A_k B_{k+1} with QR; the columns
    converge to the right singular directions ordered by growth rate.
    """
    w = np.eye(dim)
    logs_w = np.zeros(dim)
    for count, k in enumerate(range(n_steps - 1, -1, -1)):
        mv = log.moves[k]
        w = basis_at(k).T @ apply_matrix(mv.kind, mv.perm_before, basis_at(k + 1) @ w)
        if (count + 1) % _QR_EVERY == 0 or k == 0:
            w = _qr_accumulate(w, logs_w)
    return w, logs_w


def oseledets_frame(iet, n_past, n_future, log=None, rng=None):
    """Estimate the top-2 filtration of the restricted cocycle at level 0.

    The second unstable direction v2 is the second right singular direction
    of the H(pi)-restricted window product over [0, n_past]; the second
    dual direction annihilates the forward-stable plane of the window
    [0, n_future] (first dual = the length vector, known exactly).  There
    is no constructible past for a concretely given interval exchange, so
    both filtrations are read off the forward expansion.  ``rng`` is kept
    for interface stability; the push starts from the deterministic
    coordinate frame.
    """
    if n_past < 2 or n_future < 2:
        raise ValidationError("windows must be at least 2 steps")
    depth = max(n_past, n_future)
    if log is None:
        log = expansion(iet, depth)
    elif log.n_steps < depth:
        log = log.extend(depth - log.n_steps)
    forms = _forms_cached(iet.perm.images)
    m = iet.perm.m
    dim = forms.rank
    if dim < 2:
        raise ValidationError("H(pi) must have dimension at least 2")

    bases = {}

    def basis_at(k):
        images = log.perm_at(k).images
        if images not in bases:
            bases[images] = _forms_cached(images).H_basis
        return bases[images]

    w_v, logs_v = _right_singular_frame(log, n_past, dim, basis_at)
    w_d, logs_d = _right_singular_frame(log, n_future, dim, basis_at)
    rates = logs_v / max(1, n_past)
    checks = [np.exp(rates[0] - rates[1])]
    if dim > 2:
        checks.append(np.exp((logs_d[1] - logs_d[2]) / max(1, n_future)))
    gap_ratio = float(min(checks))
    if gap_ratio < 1.0 + 1e-3:
        raise DegenerateGap("top singular ratios %.6f too close to 1" % gap_ratio)

    lam0 = log.base.lam
    b0 = basis_at(0)
    v1 = np.ones(m)
    ones_h = forms.project_H(np.ones(m))
    denom = float(np.dot(ones_h, lam0))
    v2 = b0 @ w_v[:, 1]
    v2 = v2 - (float(np.dot(v2, lam0)) / denom) * ones_h
    norm = np.linalg.norm(v2)
    if norm < 1e-12:
        raise DegenerateGap("estimated v2 collapsed to zero")
    v2 = v2 / norm
    imax = int(np.argmax(np.abs(v2)))
    if v2[imax] < 0:
        v2 = -v2

    dual1 = lam0.copy()
    # dual2 lies in the orthocomplement of the stable plane span{w3, ...}
    # within H-coordinates, i.e. in span{w1, w2}; the multiple of w1 is
    # fixed by <dual2, v1> = 0 and the scale by <v2, dual2> = 1.
    d1 = b0 @ w_d[:, 0]
    d2 = b0 @ w_d[:, 1]
    p1 = float(np.dot(d1, v1))
    p2 = float(np.dot(d2, v1))
    dual2 = d2 - (p2 / p1) * d1 if abs(p1) > abs(p2) * 1e-12 else d2
    pairing = float(np.dot(v2, dual2))
    if abs(pairing) < 1e-12:
        raise DegenerateGap("v2 and dual2 nearly orthogonal; windows too short")
    dual2 = dual2 / pairing

    frame = OseledetsFrame(
        level=0,
        v1=v1,
        v2=v2,
        dual1=dual1,
        dual2=dual2,
        biorth_residual=0.0,
        gap_ratio=gap_ratio,
    )
    residual = float(np.max(np.abs(frame.pairing_matrix() - np.eye(2))))
    return OseledetsFrame(0, v1, v2, dual1, dual2, residual, gap_ratio)


def push_v2(log, frame, level):
    """Forward transport of v2 to a level, stripping the roundoff-induced
    top component against the exact (lambda, heights) dual pair."""
    v = frame.v2.copy()
    h_dir = np.ones(log.base.m)
    h_dir /= np.linalg.norm(h_dir)
    for k in range(level):
        mv = log.moves[k]
        v = apply_matrix_transpose(mv.kind, mv.perm_before, v)
        h_dir = apply_matrix_transpose(mv.kind, mv.perm_before, h_dir)
        h_dir /= np.linalg.norm(h_dir)
        if (k + 1) % _QR_EVERY == 0:
            lam_k = log.lam_normalized(k + 1)
            v -= (float(np.dot(v, lam_k)) / float(np.dot(h_dir, lam_k))) * h_dir
    return v


def dual_frame_at(log, frame, level, window=800):
    """Second dual vector anchored at a level of the expansion.

    A single level-0 dual vector cannot be transported deep in floating
    point when theta_2 < theta_1/2: the finite-level dual plane misaligns
    by exp(-2 theta_2 t) while the inverse transport amplifies residuals by
    exp(theta_1 t).  Rebuilding the dual frame from the window
    [level, level + window] keeps it aligned at the level where the pairing
    is evaluated.  Returns (v2_at_level, dual2_at_level, log), normalized
    so <v2_at_level, dual2_at_level> = 1 and <h^(level), dual2> = 0.
    """
    from . import adic

    if log.n_steps < level + window:
        log = log.extend(level + window - log.n_steps)
    forms0 = _forms_cached(log.perm_at(level).images)
    dim = forms0.rank
    bases = {}

    def basis_at(k):
        images = log.perm_at(level + k).images
        if images not in bases:
            bases[images] = _forms_cached(images).H_basis
        return bases[images]

    w = np.eye(dim)
    logs_w = np.zeros(dim)
    for count, k in enumerate(range(window - 1, -1, -1)):
        mv = log.moves[level + k]
        w = basis_at(k).T @ apply_matrix(mv.kind, mv.perm_before, basis_at(k + 1) @ w)
        if (count + 1) % _QR_EVERY == 0 or k == 0:
            w = _qr_accumulate(w, logs_w)

    heights = np.array([float(h) for h in adic.coding(log).int_heights[level]])
    b0 = basis_at(0)
    d1 = b0 @ w[:, 0]
    d2 = b0 @ w[:, 1]
    p1 = float(np.dot(d1, heights))
    p2 = float(np.dot(d2, heights))
    dual2 = d2 - (p2 / p1) * d1
    v2n = push_v2(log, frame, level)
    pairing = float(np.dot(v2n, dual2))
    if abs(pairing) < 1e-14:
        raise DegenerateGap("anchored dual pairing degenerate at level %d" % level)
    return v2n, dual2 / pairing, log


def log_h2_profile(iet, frame, s_values, log=None):
    """log of the norm growth H_2(s) = |A(s) v2| / |v2| at each time.

    ``s`` is Teichmueller time; the product runs to the first induction step
    whose accumulated roof reaches s.  Euclidean norm (any norm works for
    the growth rate).  Log values, since H_2 overflows for s beyond ~2000.
    """
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    if np.any(s_values < 0):
        raise ValidationError("s must be >= 0")
    s_max = float(s_values.max())
    if log is None:
        log = expansion(iet, 64)
    while log.log_scales[-1] < s_max:
        log = log.extend(max(64, log.n_steps))
    out = np.empty_like(s_values)
    order = np.argsort(s_values)
    v = frame.v2.copy()
    lognorm = 0.0
    base_norm = np.linalg.norm(v)
    # Rounding noise feeds the top direction, which outgrows v2 at rate
    # theta_1 - theta_2; strip it periodically using the exact dual pair
    # (lambda^(k), h^(k)) transported along the orbit.
    h_dir = np.ones(log.base.m)
    h_dir /= np.linalg.norm(h_dir)
    k = 0
    for pos in order:
        s = s_values[pos]
        while log.log_scales[k] < s:
            mv = log.moves[k]
            v = apply_matrix_transpose(mv.kind, mv.perm_before, v)
            h_dir = apply_matrix_transpose(mv.kind, mv.perm_before, h_dir)
            h_dir /= np.linalg.norm(h_dir)
            k += 1
            if k % _QR_EVERY == 0:
                lam_k = log.lam_normalized(k)  # scale cancels in the projector
                coeff = float(np.dot(v, lam_k)) / float(np.dot(h_dir, lam_k))
                v -= coeff * h_dir
            n = np.linalg.norm(v)
            lognorm += np.log(n / base_norm)
            v *= base_norm / n
        out[pos] = lognorm
    return out, log


def h2_profile(iet, frame, s_values, log=None):
    """H_2(s) values (exponentiated); see :func:`log_h2_profile`."""
    values, log = log_h2_profile(iet, frame, s_values, log=log)
    return np.exp(values), log


def h2_cocycle(iet, frame, s, log=None):
    """H_2(s) for a single time; see :func:`log_h2_profile`."""
    values, _ = log_h2_profile(iet, frame, [s], log=log)
    return float(np.exp(values[0]))


def check_symplectic(perm, move, v1, v2):
    """|L_{c pi}(A^t v1, A^t v2) - L_pi(v1, v2)| for one move."""
    forms = _forms_cached(perm.images)
    forms_next = _forms_cached(move.perm_after.images)
    lhs = forms_next.form(
        apply_matrix_transpose(move.kind, perm, np.asarray(v1, dtype=float)),
        apply_matrix_transpose(move.kind, perm, np.asarray(v2, dtype=float)),
    )
    rhs = forms.form(v1, v2)
    return abs(lhs - rhs)
