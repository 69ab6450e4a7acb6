"""Command-line front end.

Subcommands mirror the library layers: ``pf`` (one power-flow solve),
``stabset`` (certified uncertainty scaling and voltage floors), ``opf``
(nominal or robust set points), ``simulate`` (staircase ramp experiments),
``run`` (full pipeline with Monte-Carlo validation), ``validate``
(empirical guarantee check for given set points), and ``bench`` (nominal
versus robust timing table).  ``--case`` accepts either a bundled
topology name or a path to a case file in the JSON schema.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, robustopf
from .dynsim import ramp_scenario, simulate
from .netcase import NetworkCase, builtin_case, load_case
from .powerflow import grid_equations, losses, pf_residual, solve_pf
from .stabset import robust_stability_set
from .statespace import assemble
from .topologies import TOPOLOGIES


def _load(case_arg: str) -> NetworkCase:
    if case_arg in TOPOLOGIES:
        return builtin_case(case_arg)
    return load_case(Path(case_arg))


def _floats(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.split(",") if tok])


def _broadcast(values: np.ndarray, n: int, what: str) -> np.ndarray:
    if len(values) == 1:
        return np.full(n, values[0])
    if len(values) != n:
        raise SystemExit(f"expected 1 or {n} {what} values, got {len(values)}")
    return values


def _cmd_pf(args) -> int:
    case = _load(args.case)
    ge = grid_equations(case)
    model = assemble(case)
    vref = _broadcast(_floats(args.vref), case.n_sources, "vref")
    p = _broadcast(_floats(args.p), case.n_loads, "load power")
    sol = solve_pf(ge, vref, p)
    res = float(np.max(np.abs(pf_residual(ge, vref, p, sol.v_load))))
    print(f"converged in {sol.iterations} iterations, "
          f"residual {res:.3e} W, losses {losses(ge, vref, sol):.2f} W")
    rows = []
    for ld, v in zip(case.loads, sol.v_load):
        rows.append((f"load {ld.bus}", v, "V"))
    for s, v in zip(case.sources, sol.v_source):
        rows.append((f"source {s.bus}", v, "V"))
    for ln, i in zip(case.lines, sol.i_line):
        rows.append((f"{ln.id}", i, "A"))
    for name, value, unit in rows:
        print(f"  {name:>14s}  {value:12.4f} {unit}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("id,value,unit\n")
            for name, value, unit in rows:
                fh.write(f"{name},{value:.8f},{unit}\n")
        print(f"wrote {args.out}")
    if args.dump_matrices:
        blob = {"A": model.A.tolist(), "B": model.B.tolist(),
                "C": model.C.tolist(), "D": (-model.C).tolist()}
        Path(args.dump_matrices).write_text(json.dumps(blob))
        print(f"wrote {args.dump_matrices}")
    return 0


def _cmd_stabset(args) -> int:
    case = _load(args.case)
    delta0 = None
    if args.delta0:
        delta0 = _broadcast(_floats(args.delta0), case.n_loads, "delta0")
    stab = robust_stability_set(case, method=args.method, delta0=delta0)
    print(f"beta  = {stab.beta:.6g}")
    print(f"alpha = {stab.alpha:.6g}")
    print(f"method = {stab.method}, trials = {stab.trials}, "
          f"bracket = ({stab.beta_lo:.6g}, {stab.beta_hi:.6g})")
    if stab.witness is not None:
        print(f"witness margin = {stab.witness.margin:.3e}")
    for ld, vf in zip(case.loads, stab.v_floor):
        print(f"  floor load {ld.bus:>4s}  {vf:10.4f} V")
    if args.dump_witness and stab.witness is not None:
        Path(args.dump_witness).write_text(
            json.dumps({"P": stab.witness.P.tolist(),
                        "margin": stab.witness.margin,
                        "method": stab.witness.method}))
        print(f"wrote {args.dump_witness}")
    return 0


def _json_opf(sol) -> dict:
    base = {"vref_v": sol.vref.tolist(), "v_star_v": sol.v_star.tolist(),
            "v_source_v": sol.v_source.tolist(),
            "i_line_a": sol.i_line.tolist(),
            "objective_w": sol.objective,
            "loss_total_w": sol.loss_total_w,
            "loss_series_w": sol.loss_series_w,
            "kkt_residual": sol.kkt_residual,
            "constr_violation": sol.constr_violation,
            "iterations": sol.iterations}
    if isinstance(sol, robustopf.RobustOpfSolution):
        base.update({"u_min": sol.u_min, "r_bar": sol.r_bar,
                     "band_lo_v": sol.band_lo.tolist(),
                     "band_hi_v": sol.band_hi.tolist(),
                     "aux": sol.aux,
                     "p_worst_w": sol.p_worst.tolist(),
                     "v_floor_v": sol.v_floor.tolist()})
    return base


def _cmd_opf(args) -> int:
    case = _load(args.case)
    ge = grid_equations(case)
    if args.mode == "nominal":
        sol = robustopf.solve_nominal_opf(case, ge=ge)
    else:
        stab = None
        if args.gevp != "none":
            stab = robust_stability_set(case, method=args.gevp)
        sol = robustopf.solve_robust_opf(case, stab=stab, ge=ge,
                                         worst_mode=args.worstcase)
    print(f"{args.mode} set points: "
          + ", ".join(f"{v:.1f}" for v in sol.vref) + " V")
    print(f"objective {sol.objective:.2f} W (total losses "
          f"{sol.loss_total_w:.2f} W, series {sol.loss_series_w:.2f} W), "
          f"KKT {sol.kkt_residual:.2e}")
    if isinstance(sol, robustopf.RobustOpfSolution):
        print(f"certified band radius r_bar = {sol.r_bar:.6g} "
              f"(u_min = {sol.u_min:.6g})")
        print(f"band [{np.min(sol.band_lo):.2f}, "
              f"{np.max(sol.band_hi):.2f}] V, floor "
              f"{np.max(sol.v_floor):.2f} V")
    if args.out:
        Path(args.out).write_text(json.dumps(_json_opf(sol), indent=2))
        print(f"wrote {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    case = _load(args.case)
    ge = grid_equations(case)
    model = assemble(case)
    vref = _broadcast(_floats(args.vref), case.n_sources, "vref")
    start, step, period, end = (float(x) for x in args.ramp.split(","))
    scenario = ramp_scenario(vref, case.n_loads, start, step, period, end)
    traj = simulate(model, scenario, ge=ge, t_end=args.t_end,
                    v_max=float(np.max(case.v_max())),
                    method=args.method)
    for f in traj.flags:
        tags = [t for t, on in
                (("converged", f.converged_to_equilibrium),
                 ("diverged", f.diverged),
                 ("growing", f.oscillation_growing)) if on]
        print(f"  p={f.p_level[0]:10.1f} W  t=[{f.t_start:7.2f},"
              f"{f.t_end:7.2f}] s  {' '.join(tags) or 'transient'}")
    if traj.diverged:
        print(f"instability detected at t={traj.t_unstable:.2f} s, "
              f"load {traj.p_unstable[0]:.0f} W")
    else:
        print("no instability detected")
    if args.out:
        ids = ([f"i_{ln.id}" for ln in case.lines]
               + [f"v_src_{s.bus}" for s in case.sources]
               + [f"v_load_{ld.bus}" for ld in case.loads])
        with open(args.out, "w") as fh:
            fh.write("t," + ",".join(ids) + "\n")
            for k, t in enumerate(traj.times):
                vals = ",".join(f"{x:.6f}" for x in traj.states[:, k])
                fh.write(f"{t:.6f},{vals}\n")
        print(f"wrote {args.out}")
    return 0 if not traj.diverged else 2


def _cmd_run(args) -> int:
    case = _load(args.case)
    sol, stab, report = harness.run_algorithm1(
        case, n_samples=args.samples, seed=args.seed,
        gevp_method=args.gevp, worst_mode=args.worstcase)
    print(harness.report_to_markdown(report), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{case.name}_report.json").write_text(
            harness.report_to_json(report))
        (out / f"{case.name}_report.md").write_text(
            harness.report_to_markdown(report))
        (out / f"{case.name}_solution.json").write_text(
            json.dumps(_json_opf(sol), indent=2))
        print(f"wrote artifacts to {out}/")
    return 0 if report.validation.fail_count == 0 else 1


def _cmd_validate(args) -> int:
    case = _load(args.case)
    stab = None
    if args.gevp != "none":
        stab = robust_stability_set(case, method=args.gevp)
    vref = _broadcast(_floats(args.vref), case.n_sources, "vref")
    report = harness.validate(case, vref, stabset=stab,
                              n_samples=args.samples, seed=args.seed)
    print(f"{report.pass_count}/{report.n_total} samples passed "
          f"(band checked: {report.band_checked}, "
          f"floor checked: {report.floor_checked})")
    for d in report.fail_details[:args.show_failures]:
        print(f"  sample {d['sample']}: {', '.join(d['reasons'])}")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2,
                                             sort_keys=True))
        print(f"wrote {args.out}")
    return 0 if report.fail_count == 0 else 1


def _cmd_bench(args) -> int:
    names = [tok for tok in args.cases.split(",") if tok]
    rows = harness.bench(names, reps=args.reps)
    print(harness.bench_to_markdown(rows), end="")
    if args.out:
        Path(args.out).write_text(harness.bench_to_csv(rows))
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dcropf",
        description="Robust voltage set points for DC networks with "
                    "uncertain constant-power loads.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pf", help="solve one power flow")
    p.add_argument("--case", required=True)
    p.add_argument("--vref", required=True,
                   help="comma-separated volts (1 value broadcasts)")
    p.add_argument("--p", required=True,
                   help="comma-separated watts (1 value broadcasts)")
    p.add_argument("--out", help="write id,value,unit CSV")
    p.add_argument("--dump-matrices", help="write state matrices as JSON")
    p.set_defaults(func=_cmd_pf)

    p = sub.add_parser("stabset", help="certify the uncertainty scaling")
    p.add_argument("--case", required=True)
    p.add_argument("--method", default="auto",
                   choices=["auto", "vertex", "single", "passivity"])
    p.add_argument("--delta0", help="comma-separated base box (W/V^2)")
    p.add_argument("--dump-witness", help="write the Lyapunov witness JSON")
    p.set_defaults(func=_cmd_stabset)

    p = sub.add_parser("opf", help="solve for set points")
    p.add_argument("--case", required=True)
    p.add_argument("--mode", required=True, choices=["nominal", "robust"])
    p.add_argument("--worstcase", default="endpoint",
                   choices=["endpoint", "exact"])
    p.add_argument("--gevp", default="auto",
                   choices=["auto", "vertex", "single", "passivity", "none"],
                   help="stability-floor method for robust mode")
    p.add_argument("--out", help="write the solution JSON")
    p.set_defaults(func=_cmd_opf)

    p = sub.add_parser("simulate", help="staircase ramp experiment")
    p.add_argument("--case", required=True)
    p.add_argument("--vref", required=True)
    p.add_argument("--ramp", required=True,
                   help="start_w,step_w,period_s,end_w")
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--method", default="implicit",
                   choices=["implicit", "explicit"])
    p.add_argument("--out", help="write trajectory CSV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("run", help="full pipeline plus validation")
    p.add_argument("--case", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gevp", default="auto",
                   choices=["auto", "vertex", "single", "passivity"])
    p.add_argument("--worstcase", default="endpoint",
                   choices=["endpoint", "exact"])
    p.add_argument("--out", help="directory for report artifacts")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("validate", help="check set points empirically")
    p.add_argument("--case", required=True)
    p.add_argument("--vref", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gevp", default="auto",
                   choices=["auto", "vertex", "single", "passivity", "none"])
    p.add_argument("--show-failures", type=int, default=10)
    p.add_argument("--out", help="write the report JSON")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("bench", help="nominal versus robust timings")
    p.add_argument("--cases", default=",".join(harness.BENCH_CASES))
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", help="write the timing CSV")
    p.set_defaults(func=_cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
