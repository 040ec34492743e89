"""Command-line driver: ``lrsplit <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import LowRankError
from .experiments import (
    DLE_METHODS,
    DRE_METHODS,
    ExperimentPlan,
    cached_reference,
    run_compare,
    run_convergence,
    run_method,
    write_csv,
)
from .baselines import KPIKConfig
from .expmv import ExpmvConfig
from .metrics import defect_psd, defect_sym, error_scaled
from .problems import ProblemSpec, heat_dle_spec, lqr_dre_spec


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:  # a:b means 2^a .. 2^b
            lo, hi = (int(x) for x in part.split(":"))
            out.extend(2**k for k in range(lo, hi + 1))
        elif part:
            out.append(int(part))
    return out


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _load_spec(args, kind: str) -> ProblemSpec:
    if args.problem:
        spec = ProblemSpec.load(args.problem)
    else:
        spec = heat_dle_spec() if kind == "dle" else lqr_dre_spec()
    if args.seed is not None:
        for i, name in enumerate(("Q", "X0")):
            desc = dict(getattr(spec, name))
            if desc.get("type") == "random":
                desc["seed"] = args.seed + i
                setattr(spec, name, desc)
    return spec


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_common(p: argparse.ArgumentParser, methods, sweep: bool) -> None:
    p.add_argument("--problem", help="problem JSON (default: built-in example)")
    if sweep:
        p.add_argument("--method", default=None, type=_str_list,
                       help=f"comma list from {', '.join(methods)}")
        p.add_argument("--rank", default=None, type=_int_list, help="comma list; a:b = 2^a..2^b")
        p.add_argument("--nsteps", default=None, type=_int_list, help="comma list; a:b = 2^a..2^b")
    else:
        p.add_argument("--method", default="lie", choices=methods)
        p.add_argument("--rank", type=int, default=None)
        p.add_argument("--nsteps", type=int, default=None)
    p.add_argument("--tol", type=float, default=None,
                   help="expmv tolerance (splitting) or K-PIK stopping tolerance")
    p.add_argument("--toly", type=float, default=1e-12, help="K-PIK eigenvalue cut-off")
    p.add_argument("--seed", type=int, default=None, help="override seeds of random factors")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--reference", default=None,
                   help="dopri5, exact (symmetric DLEs) or a reference binary")
    p.add_argument("--workers", type=int, default=1)


def _configs(args, solver: dict):
    method_is_kpik = getattr(args, "method", None) in ("be-kpik", "richardson")
    expmv_tol = solver.get("expmv_tol", 1e-12)
    kpik_tol = solver.get("kpik_tol", 1e-10)
    if args.tol is not None:
        if method_is_kpik:
            kpik_tol = args.tol
        else:
            expmv_tol = args.tol
    return expmv_tol, kpik_tol


def cmd_solve(args, kind: str) -> int:
    spec = _load_spec(args, kind)
    solver = spec.solver
    rank = args.rank or solver.get("rank", 10)
    nsteps = args.nsteps or solver.get("nsteps", 16)
    expmv_tol, kpik_tol = _configs(args, solver)
    p = spec.build()
    rep = run_method(p, args.method, rank, nsteps, ExpmvConfig(tol=expmv_tol),
                     KPIKConfig(tol=kpik_tol, tolY=args.toly))
    out = _out_dir(args)
    summary = rep.summary()
    summary["problem_digest"] = spec.digest()
    row = {"method": args.method, "rank": rep.rank, "nsteps": nsteps, "error": float("nan"),
           "d_sym": float("nan"), "d_psd": float("nan"), "seconds": rep.seconds, "status": "ok"}
    if args.reference:
        Xref = cached_reference(spec, out / "cache", args.reference)
        nref = float(np.linalg.norm(Xref))
        row["error"] = error_scaled(rep.final, Xref)
        row["d_sym"] = defect_sym(rep.final, nref)
        row["d_psd"] = defect_psd(rep.final, nref)
        summary.update(error=row["error"], d_sym=row["d_sym"], d_psd=row["d_psd"])
    write_csv([row], out / "results.csv")
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({k: summary[k] for k in summary if k not in ("ranks", "sym_defect", "psd_defect")}))
    return 0


def _plan(args, kind: str, methods, ranks, nsteps) -> ExperimentPlan:
    spec = _load_spec(args, kind)
    expmv_tol, kpik_tol = _configs(args, spec.solver)
    return ExperimentPlan(
        spec, args.method or methods, args.rank or ranks, args.nsteps or nsteps,
        reference=args.reference or "dopri5", out_dir=args.out,
        cache_dir=str(Path(args.out) / "cache"), expmv_tol=expmv_tol, kpik_tol=kpik_tol,
        kpik_toly=args.toly, workers=args.workers,
    )


def _write_orders(out: str, orders) -> None:
    data = [{"method": m, "rank": r, "order": o, "fitted_points": used}
            for (m, r), (o, used) in orders.items()]
    Path(out, "report.json").write_text(json.dumps({"orders": data}, indent=2) + "\n",
                                        encoding="utf-8")
    for d in data:
        print(f"{d['method']:>10} rank {d['rank']:>3}: order {d['order']:.3f}")


def cmd_bench_convergence(args) -> int:
    kind = "dle"
    if args.problem:
        kind = ProblemSpec.load(args.problem).kind
    plan = _plan(args, kind, ["lie", "strang"], [2, 4, 6, 8, 10, 12, 14],
                 [2**k for k in range(1, 12)])
    _, orders = run_convergence(plan)
    _write_orders(args.out, orders)
    return 0


def cmd_bench_compare(args) -> int:
    plan = _plan(args, "dle", ["lie", "be-kpik"], [14], [2**k for k in range(4, 10)])
    _, orders = run_compare(plan)
    _write_orders(args.out, orders)
    return 0


def cmd_defects(args) -> int:
    plan = _plan(args, "dle", ["lie", "nonsym-lie"], [2, 4, 6, 8, 10, 12, 14], [2, 16, 128, 2048])
    rows, _ = run_convergence(plan)
    print(f"{'method':>10} {'rank':>4} {'nsteps':>6} {'d_sym':>10} {'d_psd':>10}")
    for r in rows:
        print(f"{r['method']:>10} {r['rank']:>4} {r['nsteps']:>6} {r['d_sym']:10.2e} {r['d_psd']:10.2e}")
    return 0


def cmd_gen_problem(args) -> int:
    if args.kind == "dle":
        spec = heat_dle_spec(args.dtil, args.T, seed=args.seed)
        if args.distribution != "uniform":
            for name in ("Q", "X0"):
                getattr(spec, name)["distribution"] = args.distribution
    else:
        spec = lqr_dre_spec(args.dtil, args.T, "identity" if args.x0 == "identity" else "zero")
    if args.out == "-":
        print(spec.to_json())
    else:
        spec.save(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrsplit",
                                 description="Low-rank splitting solvers for matrix Lyapunov/Riccati ODEs")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve-dle", help="single DLE solve")
    _add_common(p, DLE_METHODS, sweep=False)
    p.set_defaults(func=lambda a: cmd_solve(a, "dle"))
    p = sub.add_parser("solve-dre", help="single DRE solve")
    _add_common(p, DRE_METHODS, sweep=False)
    p.set_defaults(func=lambda a: cmd_solve(a, "dre"))
    p = sub.add_parser("bench-convergence", help="error vs step size and rank")
    _add_common(p, DLE_METHODS, sweep=True)
    p.set_defaults(func=cmd_bench_convergence)
    p = sub.add_parser("bench-compare", help="Lie splitting vs backward Euler with K-PIK")
    _add_common(p, DLE_METHODS, sweep=True)
    p.set_defaults(func=cmd_bench_compare)
    p = sub.add_parser("defects", help="symmetry and PSD defect tables")
    _add_common(p, DLE_METHODS, sweep=True)
    p.set_defaults(func=cmd_defects)
    p = sub.add_parser("gen-problem", help="write a problem JSON")
    p.add_argument("--kind", choices=("dle", "dre"), default="dle")
    p.add_argument("--dtil", type=int, default=20)
    p.add_argument("--T", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--distribution", choices=("uniform", "normal"), default="uniform")
    p.add_argument("--x0", choices=("zero", "identity"), default="zero", help="DRE initial value")
    p.add_argument("--out", default="-", help="file name, '-' for stdout")
    p.set_defaults(func=cmd_gen_problem)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LowRankError, OSError) as exc:
        print(f"lrsplit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
