"""Command-line front end: reproducible renormalization experiments.

Subcommands: spectrum | deviation | limit | variance | verify.
All outputs are deterministic functions of (config, seed): files embed the
config hash and seed in a header line and reruns are byte-identical.
Exit codes: 0 ok, 1 config error, 2 warnings / failed checks.
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import IetflowError, ValidationError
from .rauzy import Iet, Permutation, check_irreducible, expansion, rauzy_class
from .rng import GENERATOR_NAME, sample_simplex_balanced, spawn
from .zipper import sample_zr, veech_forms

_CONFIG_FIELDS = {
    "perm": list,
    "seed": int,
    "depth": int,
    "samples": int,
    "s_grid": list,
    "tau_grid": list,
    "N_grid": list,
    "tolerances": dict,
    "output_dir": str,
}

_DEFAULTS = {
    "depth": 2000,
    "samples": 4000,
    "s_grid": [4.0, 6.0, 8.0, 10.0],
    "tau_grid": [0.25, 0.5, 0.75, 1.0],
    "N_grid": [int(round(v)) for v in np.logspace(2, 7, 26)],
    "tolerances": {},
    "output_dir": "ietflow-out",
}


@dataclass(frozen=True)
class ExperimentConfig:
    perm: Permutation
    seed: int
    depth: int
    samples: int
    s_grid: tuple
    tau_grid: tuple
    N_grid: tuple
    tolerances: dict = field(default_factory=dict)
    output_dir: str = "ietflow-out"

    @staticmethod
    def from_dict(data):
        unknown = set(data) - set(_CONFIG_FIELDS)
        if unknown:
            raise ValidationError("unknown config fields: %s" % ", ".join(sorted(unknown)))
        if "perm" not in data:
            raise ValidationError("config must define 'perm'")
        if "seed" not in data:
            raise ValidationError("config must define 'seed'")
        merged = dict(_DEFAULTS)
        merged.update(data)
        for name, typ in _CONFIG_FIELDS.items():
            if name in merged and not isinstance(merged[name], typ):
                raise ValidationError("config field %r must be %s" % (name, typ.__name__))
        if isinstance(merged["seed"], bool) or not isinstance(merged["seed"], int):
            raise ValidationError("seed must be an integer")
        if not 0 <= merged["seed"] < 2**64:
            raise ValidationError("seed must fit in 64 bits")
        perm = Permutation(tuple(int(v) for v in merged["perm"]))
        if not check_irreducible(perm):
            raise ValidationError("permutation must be irreducible")
        for grid_name in ("s_grid", "tau_grid", "N_grid"):
            grid = merged[grid_name]
            if not grid:
                raise ValidationError("%s must be nonempty" % grid_name)
            if sorted(grid) != list(grid):
                raise ValidationError("%s must be sorted" % grid_name)
        if merged["depth"] < 64:
            raise ValidationError("depth must be at least 64")
        if merged["samples"] < 8:
            raise ValidationError("samples must be at least 8")
        return ExperimentConfig(
            perm=perm,
            seed=merged["seed"],
            depth=merged["depth"],
            samples=merged["samples"],
            s_grid=tuple(float(v) for v in merged["s_grid"]),
            tau_grid=tuple(float(v) for v in merged["tau_grid"]),
            N_grid=tuple(int(v) for v in merged["N_grid"]),
            tolerances=dict(merged["tolerances"]),
            output_dir=merged["output_dir"],
        )

    @staticmethod
    def from_file(path):
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        return ExperimentConfig.from_dict(data)

    def canonical_json(self):
        return json.dumps(
            {
                "perm": list(self.perm.images),
                "seed": self.seed,
                "depth": self.depth,
                "samples": self.samples,
                "s_grid": list(self.s_grid),
                "tau_grid": list(self.tau_grid),
                "N_grid": list(self.N_grid),
                "tolerances": self.tolerances,
            },
            sort_keys=True,
        )

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _header(cfg):
    return "# ietflow %s generator=%s config=%s seed=%d\n" % (
        __version__,
        GENERATOR_NAME,
        cfg.config_hash(),
        cfg.seed,
    )


def _write(path, header, text):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(header)
        fh.write(text)


def _json_text(payload):
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def _seeded_iet(cfg):
    lam = sample_simplex_balanced(cfg.perm.m, spawn(cfg.seed, 0))
    return Iet(lam, cfg.perm)


def _seeded_zr(cfg):
    rng = spawn(cfg.seed, 1)
    lam = sample_simplex_balanced(cfg.perm.m, rng)
    return sample_zr(cfg.perm, rng, lam=lam)


def _base_setup(cfg):
    """Seeded surface, base exchange, expansion and Oseledets frame.

    The expansion is extended until it covers a comfortable stretch of
    Teichmueller time (40 units beyond the largest requested s); the frame
    windows are sized in Teichmueller time too, so unbalanced length
    vectors with slow early contraction do not produce garbage frames.
    """
    from .spectrum import oseledets_frame

    zr = _seeded_zr(cfg)
    iet = Iet(zr.lam / zr.lam.sum(), zr.perm)
    log = expansion(iet, cfg.depth)
    target = max(40.0, (max(cfg.s_grid) if cfg.s_grid else 0.0) + 10.0)
    while log.log_scales[-1] < target:
        log = log.extend(max(256, log.n_steps))
    window_steps = int(np.searchsorted(log.log_scales, min(log.log_scales[-1] * 0.75, 250.0)))
    window_steps = max(window_steps, 64)
    frame = oseledets_frame(iet, window_steps, window_steps, log=log)
    return zr, iet, log, frame


def _test_functions(cfg, zr, iet, log, frame, centering):
    """Five seeded mean-zero interval-constant functions with certified
    nonzero second coefficient.  ``centering``: 'base' subtracts the
    base-Lebesgue mean (discrete-time experiments), 'flow' the area mean
    (suspension experiments); the second coefficient is shift-invariant.
    """
    from .ergodic import FIBER_POLYNOMIAL, TestFunction, phi_f_expansion

    rng = spawn(cfg.seed, 2)
    out = []
    tries = 0
    while len(out) < 5 and tries < 100:
        tries += 1
        c = frame.v2 + 0.35 * rng.normal(size=iet.m)
        f = TestFunction(FIBER_POLYNOMIAL, tuple((float(v),) for v in c))
        f = f.mean_zero(iet.lam) if centering == "base" else f.mean_zero_flow(zr)
        c1, c2 = phi_f_expansion(f, log, frame)
        if abs(c2) >= 0.4:
            out.append((f, c1, c2))
    if len(out) < 5:
        raise ValidationError("could not build 5 functions with c2 bounded away from 0")
    return out


def cmd_spectrum(cfg):
    from .spectrum import lyapunov_spectrum

    iet = _seeded_iet(cfg)
    report = lyapunov_spectrum(iet, cfg.depth)
    header = _header(cfg)
    out = os.path.join(cfg.output_dir, "spectrum")
    _write(os.path.join(out, "report.json"), header, _json_text(report.to_dict()))
    rows = ["step,teich_time," + ",".join("theta_%d" % (i + 1) for i in range(report.subspace_dim))]
    for row in report.convergence_trace:
        rows.append(",".join("%.17g" % v for v in row))
    _write(os.path.join(out, "trace.csv"), header, "\n".join(rows) + "\n")
    return 2 if report.warning else 0


def cmd_deviation(cfg):
    from .ergodic import (
        FIBER_POLYNOMIAL,
        TestFunction,
        deviation_exponent,
        deviation_exponent_aligned,
    )
    from .spectrum import lyapunov_spectrum

    zr, iet, log, frame = _base_setup(cfg)
    theta2 = lyapunov_spectrum(iet, max(cfg.depth, 150_000)).exponents[1]
    functions = _test_functions(cfg, zr, iet, log, frame, "base")
    n_min, n_max = min(cfg.N_grid), max(cfg.N_grid)
    x0 = float(spawn(cfg.seed, 3).random())

    summary = {"theta2": theta2, "rows": []}
    table_lines = ["name,N,abs_S,running_max"]
    for idx, (f, c1, c2) in enumerate(functions):
        aligned = deviation_exponent_aligned(iet, f, n_min, n_max, log=log)
        uniform = deviation_exponent(iet, f, x0, list(cfg.N_grid), log=log)
        summary["rows"].append(
            {
                "name": "f%d" % idx,
                "c1": c1,
                "c2": c2,
                "slope": aligned.slope,
                "slope_plain": aligned.slope_plain,
                "slope_uniform_grid": uniform.slope,
            }
        )
        for N, s_val, runmax in aligned.table:
            table_lines.append("f%d,%d,%.17g,%.17g" % (idx, int(N), abs(s_val), runmax))
    one = TestFunction(FIBER_POLYNOMIAL, tuple((1.0,) for _ in range(iet.m)))
    rep_one = deviation_exponent(iet, one, x0, list(cfg.N_grid), log=log)
    summary["slope_of_one"] = rep_one.slope
    header = _header(cfg)
    out = os.path.join(cfg.output_dir, "deviation")
    _write(os.path.join(out, "summary.json"), header, _json_text(summary))
    _write(os.path.join(out, "regression.csv"), header, "\n".join(table_lines) + "\n")
    return 0


def cmd_limit(cfg):
    from .ergodic import cocycle_distribution, empirical_limit_distribution, ks_distance

    zr, iet, log, frame = _base_setup(cfg)
    # the expansion must cover the largest renormalization time requested
    if log.log_scales[-1] < max(cfg.s_grid) + 2.0:
        raise ValidationError(
            "depth %d covers Teichmueller time %.1f < max(s)+2 = %.1f"
            % (cfg.depth, log.log_scales[-1], max(cfg.s_grid) + 2.0)
        )
    functions = _test_functions(cfg, zr, iet, log, frame, "flow")
    f, c1, c2 = functions[0]
    taus = np.asarray(cfg.tau_grid)
    header = _header(cfg)
    out = os.path.join(cfg.output_dir, "limit")
    ks_rows = ["s,ks_distance,variance_tau1_integral,variance_tau1_cocycle"]
    result = []
    for j, s in enumerate(cfg.s_grid):
        d1 = empirical_limit_distribution(zr, f, float(s), cfg.samples, taus, spawn(cfg.seed, 100 + j))
        d2 = cocycle_distribution(log, frame, float(s), cfg.samples, taus, spawn(cfg.seed, 200 + j), zr=zr)
        ks = ks_distance(d1, d2)
        result.append(ks)
        ks_rows.append("%.17g,%.17g,%.17g,%.17g" % (s, ks, d1.variance, d2.variance))
        lines = ["sample,tau,value"]
        for i in range(min(cfg.samples, 2000)):  # keep artifacts bounded
            for k, tau in enumerate(taus):
                lines.append("%d,%.17g,%.17g" % (i, tau, d1.samples[i, k]))
        _write(os.path.join(out, "integral_s%g.csv" % s), header, "\n".join(lines) + "\n")
    _write(os.path.join(out, "ks.csv"), header, "\n".join(ks_rows) + "\n")
    _write(
        os.path.join(out, "summary.json"),
        header,
        _json_text({"s_grid": list(cfg.s_grid), "ks": result, "c1": c1, "c2": c2}),
    )
    return 0


def cmd_variance(cfg):
    from .ergodic import variance_growth

    zr, iet, log, frame = _base_setup(cfg)
    functions = _test_functions(cfg, zr, iet, log, frame, "flow")
    f, c1, c2 = functions[0]
    rows, log = variance_growth(
        zr, f, list(cfg.s_grid), cfg.samples, spawn(cfg.seed, 300), frame, log
    )
    header = _header(cfg)
    out = os.path.join(cfg.output_dir, "variance")
    lines = ["s,var_integral,H2,var_cocycle,prediction,ratio"]
    for row in rows:
        lines.append(",".join("%.17g" % v for v in row))
    slope = float(np.polyfit(rows[:, 0], np.log(rows[:, 1]), 1)[0]) if len(rows) >= 2 else float("nan")
    _write(os.path.join(out, "table.csv"), header, "\n".join(lines) + "\n")
    _write(
        os.path.join(out, "summary.json"),
        header,
        _json_text({"log_var_slope": slope, "c1": c1, "c2": c2, "ratios": [float(r[5]) for r in rows]}),
    )
    return 0


def _verify_checks(cfg, quick):
    """Invariant suite; yields (name, passed, detail)."""
    from . import adic
    from .ergodic import ks_distance  # noqa: F401  (import check)
    from .spectrum import check_symplectic
    from .rauzy import _make_move, iet_apply
    from .zipper import teich_flow, validate_cone, zr_induction

    n_points = 300 if quick else 10_000
    depth = 400 if quick else 1200
    n_zr = 100 if quick else 1000

    zr = _seeded_zr(cfg)
    iet = Iet(zr.lam / zr.lam.sum(), zr.perm)
    log = expansion(iet, depth)
    while log.log_scales[-1] < 30.0:  # ensure 1e-12 digit resolution
        log = log.extend(max(128, log.n_steps))

    # conjugacy oracle
    rng = spawn(cfg.seed, 4)
    digit_depth = adic.depth_for_resolution(log, 1e-12)
    xs = rng.random(n_points)
    digits = adic.point_to_digits_batch(log, xs, digit_depth)
    successors = [adic.vershik_map(log, d) for d in digits]
    left = adic.digits_to_point_batch(log, successors)
    right = iet_apply(iet, adic.digits_to_point_batch(log, digits))
    worst = float(np.max(np.abs(left - right)))
    yield "conjugacy_oracle", worst < 1e-10, "max error %.3g over %d points" % (worst, n_points)

    # algebraic identities over the Rauzy class
    ok = True
    detail = []
    for p in rauzy_class(cfg.perm):
        for kind in ("a", "b"):
            mv = _make_move(kind, p)
            if not np.array_equal(adic.graph_of_move(mv).adjacency(), mv.matrix.T):
                ok = False
                detail.append("adjacency != matrix^t at (%s, %s)" % (kind, p))
            if abs(round(float(np.linalg.det(mv.matrix)))) != 1:
                ok = False
                detail.append("det != +-1 at (%s, %s)" % (kind, p))
    yield "adjacency_transpose_and_det", ok, "; ".join(detail) or "all moves"

    rngz = spawn(cfg.seed, 5)
    worst_area = 0.0
    worst_cone = True
    for _ in range(n_zr):
        z = sample_zr(cfg.perm, rngz)
        t = float(rngz.uniform(-0.4, 0.4))
        worst_area = max(worst_area, abs(teich_flow(z, t).area - z.area))
        z2 = zr_induction(z)
        worst_area = max(worst_area, abs(z2.area - z.area))
        worst_cone = worst_cone and validate_cone(z2.perm, z2.delta, tol=1e-10)
    yield "area_invariance", worst_area < 1e-12 and worst_cone, "max drift %.3g over %d samples" % (
        worst_area,
        n_zr,
    )

    rngs = spawn(cfg.seed, 6)
    worst_symp = 0.0
    for p in rauzy_class(cfg.perm):
        forms = veech_forms(p)
        for kind in ("a", "b"):
            mv = _make_move(kind, p)
            for _ in range(10 if quick else 50):
                v1 = forms.project_H(rngs.normal(size=cfg.perm.m))
                v2 = forms.project_H(rngs.normal(size=cfg.perm.m))
                worst_symp = max(worst_symp, check_symplectic(p, mv, v1, v2))
    yield "symplectic_residual", worst_symp < 1e-9, "max residual %.3g" % worst_symp

    nu = adic.nu_plus(log)
    lamseq = adic.nu_minus(log)
    worst_pair = max(
        abs(float(np.dot(nu.vectors[k], lamseq.vectors[k])) - 1.0) for k in range(0, depth + 1, 25)
    )
    yield "length_height_pairing", worst_pair < 1e-10, "max |<lam,h>-1| = %.3g" % worst_pair

    worst_part = 0.0
    for k in range(1, 7):
        total = sum(adic.cylinder_measure(log, d) for d in adic.iter_cylinders(log, k))
        worst_part = max(worst_part, abs(total - 1.0))
    yield "partition_of_unity", worst_part < 1e-10, "max defect %.3g to depth 6" % worst_part


def cmd_verify(cfg, quick=False):
    checks = []
    failed = False
    for name, passed, detail in _verify_checks(cfg, quick):
        checks.append({"name": name, "passed": bool(passed), "detail": detail})
        print("%s %s (%s)" % ("PASS" if passed else "FAIL", name, detail))
        failed = failed or not passed
    header = _header(cfg)
    out = os.path.join(cfg.output_dir, "verify")
    _write(
        os.path.join(out, "verify.json"),
        header,
        _json_text({"quick": bool(quick), "checks": checks, "all_passed": not failed}),
    )
    return 2 if failed else 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="ietflow", description=__doc__)
    parser.add_argument("command", choices=["spectrum", "deviation", "limit", "variance", "verify"])
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--quick", action="store_true", help="reduced depths (verify)")
    args = parser.parse_args(argv)

    try:
        if args.config:
            cfg = ExperimentConfig.from_file(args.config)
        else:
            if args.command != "verify":
                raise ValidationError("--config is required for %s" % args.command)
            cfg = ExperimentConfig.from_dict({"perm": [4, 3, 2, 1], "seed": 12345})
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["output_dir"] = args.out
        if overrides:
            data = json.loads(cfg.canonical_json())
            data["output_dir"] = cfg.output_dir
            data.update(overrides)
            cfg = ExperimentConfig.from_dict(data)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1

    try:
        if args.command == "spectrum":
            return cmd_spectrum(cfg)
        if args.command == "deviation":
            return cmd_deviation(cfg)
        if args.command == "limit":
            return cmd_limit(cfg)
        if args.command == "variance":
            return cmd_variance(cfg)
        return cmd_verify(cfg, quick=args.quick)
    except ValidationError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except IetflowError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
