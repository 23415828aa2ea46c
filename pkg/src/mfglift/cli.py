"""Command-line front end (``mfglift``).

Every subcommand prints one line per check and exits 0 iff all checks pass.
Seed sweeps fan out over a thread pool capped by ``MFGLIFT_THREADS`` and are
merged in seed order.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import archive
from .coefficients import CertificationError, certify_set, validate_existence_assumptions
from .lift import brownian_path, inverse_lift, lift_solution, structural_lipschitz, write_noise_csv
from .measures import sup_w1, w1_same_grid, write_flow_csv
from .modelfile import ModelFileError, load_model, template_path
from .ncn_solver import LQSpec, solve_lq_riccati, solve_ncn_fixed_point
from .verify import (
    VerificationReport,
    check_fixed_point,
    check_objective_equality,
    check_optimality_by_deviation,
    default_deviations,
    discretization_budget,
    simulate_particles,
)

BENCHMARK_TOL = 5e-3


def parse_seeds(text: str) -> list:
    """``"3"``, ``"0..19"`` (inclusive) or ``"1,4,9"``."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text!r}")
        return v

    return conv


def _damping(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("damping must lie in (0, 1]")
    return v


def threads() -> int:
    try:
        return max(1, int(os.environ.get("MFGLIFT_THREADS", "1")))
    except ValueError:
        return 1


def fan_out(fn, seeds):
    """``[fn(s) for s in seeds]`` evaluated in parallel, returned in seed order."""
    n = min(threads(), len(seeds))
    if n <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, seeds))


class Printer:
    def __init__(self):
        self.ok = True

    def check(self, name: str, value: float, tol: float, passed: bool) -> None:
        self.ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'} {name}: {value:.6g} (tolerance {tol:.6g})")

    def info(self, text: str) -> None:
        print(text)


def _load_cfg(args):
    path = args.config if args.config else template_path("lq")
    mf = load_model(path, dx=args.dx)
    dt = args.dt if args.dt else mf.dt
    return mf, dt


# --------------------------------------------------------------------------
# subcommands


def cmd_solve_ncn(args) -> int:
    mf, dt = _load_cfg(args)
    sol = solve_ncn_fixed_point(mf.model, dt, args.fp_tol, args.max_iter, args.damping, verbose=args.verbose)
    out = archive.save_ncn(sol, args.output, mf.name)
    p = Printer()
    res = sol.picard_residuals[-1] if sol.picard_residuals else float("nan")
    p.check("picard_residual", res, args.fp_tol, sol.converged)
    p.info(f"archive written to {out} ({len(sol.picard_residuals)} iterations)")
    return 0 if p.ok else 1


def cmd_lift(args) -> int:
    base = archive.load_ncn(args.archive)
    model = base.model
    if args.config:
        cfg = load_model(args.config).model.coefficients
        model = model.with_coefficients(b0=cfg.b0, sigma0=cfg.sigma0)
    if not base.converged:
        print("error: base solution not converged", file=sys.stderr)
        return 2
    seeds = args.seeds or [0]
    out = Path(args.output)

    def one(seed):
        cn = lift_solution(base, brownian_path(base.flow.times, seed), model)
        target = out if len(seeds) == 1 else out / f"seed_{seed}"
        archive.save_cn(cn, target)
        return seed, float(np.max(np.abs(cn.shift.values))), target

    p = Printer()
    for seed, qmax, target in fan_out(one, seeds):
        p.info(f"seed {seed}: max |q| = {qmax:.6g}, archive {target}")
    return 0


def cmd_inverse_lift(args) -> int:
    cn = archive.load_cn(args.archive)
    q, recovered = inverse_lift(cn.model, cn.flow, cn.noise)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_flow_csv(recovered, out / "recovered-flow.csv")
    write_noise_csv(cn.noise, q, out / "noise.csv")
    p = Printer()
    tol = 2.0 * cn.base.dt
    lip = structural_lipschitz(cn.model.coefficients.b0) + structural_lipschitz(cn.model.coefficients.sigma0)
    w1_tol = tol * (max(1.0, lip) if np.isfinite(lip) else 1.0)
    q_err = float(np.max(np.abs(q.values - cn.shift.values)))
    w1 = sup_w1(recovered, cn.base.flow)
    p.check("q_max_err", q_err, tol, q_err <= tol)
    p.check("max_W1", w1, w1_tol, w1 <= w1_tol)
    return 0 if p.ok else 1


def cmd_verify(args) -> int:
    kind = archive.archive_kind(args.archive)
    if kind == "cn":
        cn = archive.load_cn(args.archive)
        model, flow, feedback, common, base = cn.model, cn.flow, cn.feedback, cn.noise, cn.base
    else:
        base = archive.load_ncn(args.archive)
        cn, common = None, None
        model, flow, feedback = base.model, base.flow, base.feedback
    seeds = args.seeds or [0]
    N = args.n_particles
    stride = max(1, (flow.times.size - 1) // 50)
    dt = float(flow.times[1] - flow.times[0])
    budget = discretization_budget(feedback, dt, base.flow)
    devs = default_deviations(feedback, model, adapted=common if args.adapted else None)

    def one(seed):
        ens = simulate_particles(model, feedback, flow, N, seed, common, record_every=stride)
        w1 = check_fixed_point(flow, ens)
        gaps = check_optimality_by_deviation(model, flow, feedback, devs, N, seed, common) if args.optimality else []
        obj = check_objective_equality(base, cn, N, seed) if cn is not None else None
        return w1, gaps, obj

    results = fan_out(one, seeds)
    rep = VerificationReport()
    rep.fixed_point_W1 = max(r[0] for r in results)
    rep.add("fixed_point_W1", rep.fixed_point_W1, args.w1_tol)
    if args.optimality:
        for i, g in enumerate(results[0][1]):
            worst = min(r[1][i].gap + 3 * r[1][i].stderr for r in results)
            rep.optimality_gaps.append(g.gap)
            rep.add(f"gap_{g.name}", worst, -budget, sense=">=")
    if cn is not None:
        rel = max(r[2].error / (1.0 + abs(r[2].J_ncn)) for r in results)
        rep.objective_equality_err = rel
        rep.add("objective_equality_rel", rel, 1e-8)
    out = Path(args.output) if args.output else Path(args.archive)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / "report.csv")
    for line in rep.lines():
        print(line)
    return rep.exit_code


def lq_spec_of(model) -> LQSpec:
    """Read ``c, c_T, sigma`` off a model of the linear-quadratic shape."""
    cs = model.coefficients
    if cs.b.control_linear_gain() != 1.0 or cs.b.uses_state or cs.sigma.uses_state or cs.sigma.uses_control:
        raise ValueError("benchmark-lq needs dY = a dt + sigma dW")
    return LQSpec(
        c=-2.0 * _square_weight(cs.f),
        c_T=-2.0 * _square_weight(cs.g),
        sigma=float(cs.sigma(0.0, 0.0, model.initial, 0.0)),
    )


def _square_weight(c) -> float:
    for term in c.terms:
        F = getattr(term, "functional", None)
        if F is not None and F.kind == "convolution" and F.kernel.name == "identity" and F.outer.name == "square":
            return F.outer.param
    return 0.0


def cmd_benchmark_lq(args) -> int:
    mf, dt = _load_cfg(args)
    model = mf.model
    spec = lq_spec_of(model)
    grid = solve_ncn_fixed_point(model, dt, args.fp_tol, args.max_iter, args.damping, verbose=args.verbose)
    ric = solve_lq_riccati(spec, model.initial, model.T, dt, model.a_min, model.a_max, model)
    out = Path(args.output)
    archive.save_ncn(grid, out / "grid")
    archive.save_ncn(ric, out / "riccati")
    w1 = w1_same_grid(grid.flow.densities, ric.flow.densities, grid.flow.dx)
    with (out / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "W1"])
        for t, v in zip(grid.flow.times, w1):
            w.writerow([f"{t:.17g}", f"{v:.17g}"])
    n = model.initial.n
    core = slice(n // 10, n - n // 10)
    err = float(np.max(np.abs(grid.feedback.values[0, core] - ric.feedback.values[0, core])))
    p = Printer()
    p.check("picard_residual", grid.picard_residuals[-1], args.fp_tol, grid.converged)
    p.check("sup_W1_grid_vs_riccati", float(np.max(w1)), BENCHMARK_TOL, float(np.max(w1)) <= BENCHMARK_TOL)
    p.check("feedback_err_t0_central80", err, BENCHMARK_TOL, err <= BENCHMARK_TOL)
    return 0 if p.ok else 1


def cmd_check_assumptions(args) -> int:
    mf, _ = _load_cfg(args)
    model = mf.model
    p = Printer()
    _, reports = certify_set(model.coefficients, T=model.T)
    for key, r in reports.items():
        p.check(f"translation_invariance_{key}", r.max_violation, r.tol, r.passed)
    for key, r in validate_existence_assumptions(model, samples=args.samples).items():
        if r.passed is None:
            p.info(f"SKIP {key}: {r.note}")
        else:
            p.check(key, r.constant, float("inf"), r.passed)
    return 0 if p.ok else 1


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfglift", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def numerics(p):
        p.add_argument("--config", help="model file (default: bundled LQ template)")
        p.add_argument("--dx", type=_positive(float))
        p.add_argument("--dt", type=_positive(float))
        p.add_argument("--fp-tol", type=_positive(float), default=1e-4)
        p.add_argument("--max-iter", type=_positive(int), default=200)
        p.add_argument("--damping", type=_damping, default=0.5)
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("solve-ncn", help="solve the game without common noise")
    numerics(p)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_solve_ncn)

    p = sub.add_parser("lift", help="lift an NCN archive along common-noise paths")
    p.add_argument("--archive", required=True)
    p.add_argument("--config", help="take b0 and sigma0 from this model file")
    p.add_argument("--seeds", type=parse_seeds)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_lift)

    p = sub.add_parser("inverse-lift", help="recover the NCN flow from a CN archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_inverse_lift)

    p = sub.add_parser("verify", help="Monte Carlo checks on an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--output")
    p.add_argument("--seeds", type=parse_seeds)
    p.add_argument("--n-particles", type=_positive(int), default=10_000)
    p.add_argument("--w1-tol", type=_positive(float), default=0.05)
    p.add_argument("--no-optimality", dest="optimality", action="store_false")
    p.add_argument("--adapted-deviations", dest="adapted", action="store_true", help="add deviations adapted to B")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("benchmark-lq", help="grid solver against the Riccati solution")
    numerics(p)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_benchmark_lq)

    p = sub.add_parser("check-assumptions", help="sampled structural assumptions of a model file")
    numerics(p)
    p.add_argument("--samples", type=_positive(int), default=200)
    p.set_defaults(fn=cmd_check_assumptions)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ModelFileError, CertificationError, archive.ArchiveError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
