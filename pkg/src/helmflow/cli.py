"""Command line driver: single solves, result tables and the case39-PQ study.

Exit codes: 0 success, 2 bad input or configuration, 3 solver failure,
4 table finished with some failed cells.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .helm_pq import PqEmbeddingKind, pq_series
from .netmodel import BUILTIN_CASES, BusKind, CaseError, build_ybus, convert_pv_to_pq, load_case
from .pade import build_pade, evaluate, export_singularities, singularity_map
from .reference import (HomotopyTrace, NewtonError, Stability, case_start, newton_solve,
                        solution_q, stability_dqdv, trace_homotopy)
from .series import export_magnitudes
from .validate import MODEL_NAMES, SolutionReport, residual_bpee, solve_model

log = logging.getLogger("helmflow")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_PARTIAL = 0, 2, 3, 4
EMIT_CHOICES = ("coeffs", "singularities", "trace")
TABLE_MODELS = ("subr1", "subr2", "1", "2", "3", "4")


class InputError(Exception):
    pass


def _emit_list(text: str) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in EMIT_CHOICES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown emit item(s): {', '.join(bad)}")
    return items


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(f"{out.stem}.{suffix}.csv")


def pade_trace(coeffs: np.ndarray, l: int, m: int, zs: np.ndarray) -> np.ndarray:
    """``|V|`` of the ``[l/m]`` approximant of every column at each ``z``."""
    return np.array([np.abs(evaluate(build_pade(coeffs[:, k], l, m), zs))
                     for k in range(coeffs.shape[1])]).T


def write_trace(path: Path, zs, mags: np.ndarray, bus_ids) -> None:
    trace = HomotopyTrace([float(z) for z in zs], list(mags), True)
    trace.export(path, bus_ids)


def _format_report(rep: SolutionReport) -> str:
    delta = "n/a" if rep.max_delta is None else f"{rep.max_delta:.4e}"
    return "\n".join([
        f"case {rep.case}  model {rep.model}  pade [{rep.pade_order[0]}/{rep.pade_order[1]}]"
        f"  series order {rep.series_order}",
        f"  max|Rs|    {rep.max_rs:.4e}  (power {rep.max_rs_power:.4e}, magnitude "
        f"{rep.max_rs_magnitude:.4e})",
        f"  max|Delta| {delta}",
        f"  seconds    {rep.elapsed:.4f}  (mean of {rep.repeats})",
    ])


# ---------------------------------------------------------------------------
# commands

def cmd_solve(args) -> int:
    net = load_case(args.case)
    l, m = args.pade
    order = args.order if args.order is not None else l + m
    if order < l + m:
        raise InputError(f"--order {order} is below l+m = {l + m}")
    rep = solve_model(net, args.model, (l, m), order, subr2_footnote=args.subr2_footnote,
                      newton=not args.no_newton, repeats=args.repeats)
    print(_format_report(rep))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(rep.to_json())
        coeffs = rep.coefficients
        if "coeffs" in args.emit:
            export_magnitudes(_sibling(out, "coeffs"), coeffs, rep.bus_ids)
        if "singularities" in args.emit:
            maps = [singularity_map(coeffs[:, k], l, m, rep.bus_ids[k]) for k in range(1, net.n_bus)]
            export_singularities(_sibling(out, "singularities"), maps)
        if "trace" in args.emit:
            zs = np.linspace(0.0, 1.0, 101)
            write_trace(_sibling(out, "trace"), zs, pade_trace(coeffs, l, m, zs), rep.bus_ids)
    elif args.emit:
        raise InputError("--emit needs --out")
    return EXIT_OK


def cmd_table(args) -> int:
    cases = args.case or list(BUILTIN_CASES)
    models = args.model or list(TABLE_MODELS)
    orders = [tuple(args.pade)]
    if args.pade_sweep:
        a, b, step = args.pade_sweep
        orders = [(k, k) for k in range(a, b + 1, step)]
    rows, failed = [], 0
    for case in cases:
        net = load_case(case)
        ref = None
        if not args.no_newton:
            try:
                ref = newton_solve(net).voltages
            except NewtonError as exc:
                log.warning("%s: Newton reference failed: %s", case, exc)
        for model in models:
            for l, m in orders:
                try:
                    rep = solve_model(net, model, (l, m), max(l + m, args.order or 0),
                                      subr2_footnote=args.subr2_footnote, newton=ref is not None,
                                      repeats=args.repeats, newton_voltages=ref)
                    row = [net.name, model, rep.max_rs, rep.max_delta, rep.elapsed, f"{l}/{m}", ""]
                except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                    failed += 1
                    row = [net.name, model, math.nan, math.nan, math.nan, f"{l}/{m}",
                           f"{type(exc).__module__}.{type(exc).__name__}: {exc}"]
                rows.append(row)
                delta = "n/a" if row[3] is None else f"{row[3]:.4e}"
                print(f"{row[0]:>8} {row[1]:>6} [{row[5]:>5}]  {row[2]:.4e}  {delta:>10}  {row[4]:.4f}"
                      + (f"  {row[6]}" if row[6] else ""))
    out = sys.stdout if not args.out else open(args.out, "w", newline="")
    try:
        writer = csv.writer(out)
        writer.writerow(["system", "model", "max_rs", "max_delta", "seconds", "pade", "message"])
        for r in rows:
            writer.writerow([r[0], r[1], repr(r[2]), "" if r[3] is None else repr(r[3]), repr(r[4]),
                             r[5], r[6]])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_PARTIAL if failed else EXIT_OK


def experiment_39pq(case: str = "case39", pade: tuple[int, int] = (15, 15),
                    out_dir: Path | None = None) -> dict:
    """Compare the HELM and Newton solutions of a case with PV buses turned PQ.

    The reactive outputs of the PV buses are taken from the Newton solution
    of the original case. Newton on the altered case is tried from a flat
    start first and from the profile stored in the case file if that fails.
    """
    net = load_case(case)
    y = build_ybus(net)
    base = newton_solve(net, y)
    pqnet = convert_pv_to_pq(net, solution_q(net, y, base.voltages))
    pq_ids = [b.id for b in pqnet.buses if b.kind is BusKind.PQ]

    l, m = pade
    nn, vs = pqnet.normalized()
    bundle = pq_series(nn, build_ybus(nn), l + m, PqEmbeddingKind.CANONICAL)
    coeffs = bundle.v * vs
    helm_v = np.array([evaluate(build_pade(coeffs[:, k], l, m), 1.0) for k in range(pqnet.n_bus)])
    helm_rs = residual_bpee(pqnet, y, helm_v).max_rs

    try:
        newton, start = newton_solve(pqnet, y), "flat"
    except NewtonError as exc:
        log.info("flat start failed (%s); using the stored case profile", exc)
        newton, start = newton_solve(pqnet, y, case_start(pqnet)), "case"
    newton_v = newton.voltages

    def verdicts(v):
        res = [stability_dqdv(pqnet, y, v, b) for b in pq_ids]
        return {r.bus: r.verdict.value for r in res}

    helm_stab, newton_stab = verdicts(helm_v), verdicts(newton_v)
    trace = trace_homotopy(pqnet, y, newton_v, 1.0, 0.0)
    zs = np.linspace(0.0, 1.0, 101)
    helm_trace = pade_trace(coeffs, l, m, zs)
    k38 = pqnet.index_of(38) if 38 in pqnet.ids else int(np.argmin(np.abs(trace.voltages[-1])))
    report = {
        "schema": 1,
        "case": pqnet.name,
        "pade_order": [l, m],
        "helm": {"max_rs": helm_rs, "max_abs_v": float(np.abs(helm_v).max()),
                 "stable_everywhere": all(v == Stability.STABLE.value for v in helm_stab.values()),
                 "stability": helm_stab},
        "newton": {"start": start, "iterations": newton.iterations,
                   "max_rs": residual_bpee(pqnet, y, newton_v).max_rs,
                   "max_abs_v": float(np.abs(newton_v).max()),
                   "unstable_buses": [b for b, v in newton_stab.items() if v == Stability.UNSTABLE.value],
                   "stability": newton_stab},
        "max_difference": float(np.abs(helm_v - newton_v).max()),
        "homotopy": {"reached_z": trace.reached, "completed": trace.completed,
                     "watch_bus": pqnet.ids[k38], "watch_bus_abs_v": float(abs(trace.voltages[-1][k38])),
                     "points": len(trace.z)},
        "helm_start_min_abs_v": float(helm_trace[0].min()),
    }
    report["verdict"] = {
        "helm_solves_bpee": helm_rs <= 1e-6,
        "solutions_differ": report["max_difference"] > 0.3,
        "newton_branch_unstable": bool(report["newton"]["unstable_buses"]),
        "helm_branch_stable": report["helm"]["stable_everywhere"],
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_trace(out_dir / "helm_trace.csv", zs, helm_trace, pqnet.ids)
        trace.export(out_dir / "newton_trace.csv", pqnet.ids)
        (out_dir / "report.json").write_text(json.dumps(report, indent=1))
    report["_voltages"] = {"helm": helm_v, "newton": newton_v}
    report["_trace"] = trace
    return report


def cmd_experiment(args) -> int:
    out = Path(args.out) if args.out else None
    rep = experiment_39pq(args.case or "case39", tuple(args.pade), out)
    h, n = rep["helm"], rep["newton"]
    print(f"HELM   max|Rs| {h['max_rs']:.3e}  max|V| {h['max_abs_v']:.3f}  "
          f"stable everywhere: {h['stable_everywhere']}")
    print(f"Newton ({n['start']} start) max|Rs| {n['max_rs']:.3e}  max|V| {n['max_abs_v']:.3f}  "
          f"unstable at {len(n['unstable_buses'])} of {len(n['stability'])} PQ buses")
    print(f"max |V_helm - V_newton| = {rep['max_difference']:.3f}")
    t = rep["homotopy"]
    print(f"homotopy of the Newton branch reached z = {t['reached_z']:.3g}; "
          f"bus {t['watch_bus']} |V| = {t['watch_bus_abs_v']:.3e}")
    for key, ok in rep["verdict"].items():
        print(f"  {key}: {ok}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="helmflow", description="Holomorphic embedding load flow")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi_case=False):
        if multi_case:
            sp.add_argument("--case", nargs="+", help="case files or bundled case names")
        else:
            sp.add_argument("--case", required=True, help="case file or bundled case name")
        sp.add_argument("--order", type=int, default=None, help="series order (default l+m)")
        sp.add_argument("--pade", type=int, nargs=2, default=[15, 15], metavar=("L", "M"))
        sp.add_argument("--out", help="output path")
        sp.add_argument("--no-newton", action="store_true", help="skip the Newton comparison")
        sp.add_argument("--subr2-footnote", action="store_true",
                        help="SUBR2 without shunt conductance at PV buses")

    s = sub.add_parser("solve", help="solve one case with one model")
    common(s)
    s.add_argument("--model", choices=MODEL_NAMES, default="4")
    s.add_argument("--emit", type=_emit_list, default=[], help="coeffs,singularities,trace")
    s.add_argument("--repeats", type=int, default=1)
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("table", help="max|Rs|, max|Delta| and timing over cases and models")
    common(t, multi_case=True)
    t.add_argument("--model", nargs="+", choices=MODEL_NAMES)
    t.add_argument("--repeats", type=int, default=100)
    t.add_argument("--pade-sweep", type=int, nargs=3, metavar=("FROM", "TO", "STEP"),
                   help="diagonal orders FROM..TO instead of --pade")
    t.set_defaults(func=cmd_table)

    e = sub.add_parser("experiment-39pq", aliases=["experiment_39pq"],
                       help="HELM vs Newton on case39 with PV buses converted to PQ")
    e.add_argument("--case", default="case39")
    e.add_argument("--pade", type=int, nargs=2, default=[15, 15], metavar=("L", "M"))
    e.add_argument("--out", help="output directory")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if getattr(args, "repeats", 1) is not None and getattr(args, "repeats", 1) < 1:
        parser.error("--repeats must be at least 1")
    try:
        return args.func(args)
    except (CaseError, InputError, OSError) as exc:
        print(f"error: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"solver error: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
