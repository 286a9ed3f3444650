"""Command-line front end: ``radial-dg pf | loadability | allocate | evaluate``.

Result files go to ``--out`` or, failing that, the directory named by the
``RADIAL_DG_OUTPUT_DIR`` environment variable; with neither, results are only
printed. Every JSON result embeds the run manifest (command, case source,
resolved configuration, seed, version). Wall-clock timing is written to a
separate ``*.timing.json`` so that result files are byte-identical across
reruns.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import (MARGIN_WEIGHTED, SAMPLING_SCHEMES, AllocationConfig, AllocationError,
                         DGUnit, NoFeasibleTrial, SamplingError, apply_dg, base_reference,
                         evaluate_trial, run_monte_carlo, voltage_deviation)
from .case import CaseFormatError, NetworkCase, load_case, validate_radial
from .loadability import (DEFAULT_LAMBDA_STEP, STAGE1_V_MAX, STAGE1_V_MIN, ConstraintSet,
                          network_loadability, rank_candidates, records_to_rows,
                          simultaneous_loadability)
from .powerflow import (DEFAULT_MAX_ITER, DEFAULT_TOL, NonConvergence, line_flows, solve,
                        total_active_loss)

log = logging.getLogger("radial_dg")

OUTPUT_ENV = "RADIAL_DG_OUTPUT_DIR"
CSV_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CASE_NOT_FOUND = 3
EXIT_CASE_PARSE = 4
EXIT_NONCONVERGENCE = 5
EXIT_NO_FEASIBLE = 6
EXIT_INVALID_INPUT = 7


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _f4(x: float) -> str:
    return f"{x:.4f}"


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2, default=_json_default) + "\n",
                    encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _out_dir(args) -> Path | None:
    target = args.out or os.environ.get(OUTPUT_ENV)
    if not target:
        return None
    path = Path(target)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(args, config: dict) -> dict:
    return {"command": args.command, "case_source": args.case, "config": config,
            "seed": config.get("seed"), "tool": "radial-dg", "version": __version__,
            "csv_schema_version": CSV_SCHEMA_VERSION}


def _write_timing(out: Path, stem: str, started: float) -> None:
    _write_json(out / f"{stem}.timing.json",
                {"wall_clock_seconds": round(time.perf_counter() - started, 6)})


def _load(args) -> NetworkCase:
    try:
        case = load_case(args.case)
    except FileNotFoundError:
        raise CliError(f"case file not found: {args.case}", EXIT_CASE_NOT_FOUND) from None
    except CaseFormatError as exc:
        raise CliError(f"cannot parse case {args.case}: {exc}", EXIT_CASE_PARSE) from None
    report = validate_radial(case)
    if not report.ok:
        raise CliError(f"case {args.case} is not radial (connected={report.connected}, "
                       f"tree={report.is_tree})", EXIT_CASE_PARSE)
    if getattr(args, "zero_loads", False):
        case = case.scaled_loads(0.0)
    limits = {k: getattr(args, k, None) for k in ("line_p_max", "line_q_max", "line_i_max")}
    if any(v is not None for v in limits.values()):
        fields = {"line_p_max": "pl_max", "line_q_max": "ql_max", "line_i_max": "i_max"}
        changes = {fields[k]: v for k, v in limits.items() if v is not None}
        case = dataclasses.replace(
            case, branches=tuple(dataclasses.replace(br, **changes) for br in case.branches))
    slack = {k: getattr(args, k, None) for k in ("slack_p_max", "slack_p_min",
                                                 "slack_q_max", "slack_q_min")}
    if any(v is not None for v in slack.values()):
        changes = {k.replace("slack_", ""): v for k, v in slack.items() if v is not None}
        case = dataclasses.replace(case,
                                   slack_limits=dataclasses.replace(case.slack_limits, **changes))
    return case


def _solve(case, args):
    try:
        return solve(case, args.tol, args.max_iter)
    except NonConvergence as exc:
        raise CliError(str(exc), EXIT_NONCONVERGENCE) from None


def _case_summary(case: NetworkCase) -> dict:
    return {"name": case.name, "n_bus": case.n_bus, "n_branch": len(case.branches),
            "base_mva": case.base_mva, "total_p_load_mw": case.total_p_load,
            "total_q_load_mvar": case.total_q_load}


# ---------------------------------------------------------------------------
# pf
# ---------------------------------------------------------------------------

def cmd_pf(args) -> int:
    started = time.perf_counter()
    case = _load(args)
    sol = _solve(case, args)
    v_min, v_bus = sol.v_min()
    below = int(np.sum(sol.v_mag < args.vmin_report))
    print(f"case {case.name}: {case.n_bus} buses, {len(case.branches)} branches, "
          f"load {_f4(case.total_p_load)} MW / {_f4(case.total_q_load)} MVAr")
    print(f"converged in {sol.iterations} iterations")
    print(f"active loss   {_f4(sol.p_loss_total)} MW")
    print(f"reactive loss {_f4(sol.q_loss_total)} MVAr")
    print(f"slack supply  {_f4(sol.slack_p)} MW / {_f4(sol.slack_q)} MVAr")
    print(f"V_min         {_f4(v_min)} p.u. at bus {v_bus}")
    print(f"buses below {args.vmin_report:g} p.u.: {below}")
    if args.verbose:
        print("bus,v_mag_pu,v_ang_deg")
        for bid, vm, va in zip(sol.bus_ids, sol.v_mag, np.degrees(sol.v_ang)):
            print(f"{bid},{_f4(vm)},{_f4(va)}")
    out = _out_dir(args)
    if out is not None:
        _write_csv(out / "pf_buses.csv", ["bus", "v_mag_pu", "v_ang_deg"],
                   [[int(b), _f4(vm), _f4(va)] for b, vm, va in
                    zip(sol.bus_ids, sol.v_mag, np.degrees(sol.v_ang))])
        _write_csv(out / "pf_branches.csv",
                   ["from_bus", "to_bus", "pl_mn_mw", "ql_mn_mvar", "pl_nm_mw", "ql_nm_mvar",
                    "current_pu", "p_loss_mw"],
                   [[f.from_bus, f.to_bus, _f4(f.pl_mn), _f4(f.ql_mn), _f4(f.pl_nm),
                     _f4(f.ql_nm), _f4(f.current), _f4(f.pl_mn + f.pl_nm)]
                    for f in line_flows(sol, case)])
        config = {"tol": args.tol, "max_iter": args.max_iter, "zero_loads": args.zero_loads}
        _write_json(out / "pf.json", {
            "manifest": _manifest(args, config), "case": _case_summary(case),
            "results": {"converged": True, "iterations": sol.iterations,
                        "p_loss_mw": sol.p_loss_total, "q_loss_mvar": sol.q_loss_total,
                        "slack_p_mw": sol.slack_p, "slack_q_mvar": sol.slack_q,
                        "v_min_pu": v_min, "v_min_bus": v_bus, "buses_below": below,
                        "v_mag_pu": sol.v_mag, "v_ang_rad": sol.v_ang},
            "files": ["pf_buses.csv", "pf_branches.csv"]})
        _write_timing(out, "pf", started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# loadability
# ---------------------------------------------------------------------------

def cmd_loadability(args) -> int:
    started = time.perf_counter()
    case = _load(args)
    try:
        cs = ConstraintSet.from_case(case, args.vmin, args.vmax)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID_INPUT) from None
    records = network_loadability(case, args.step, cs, tol=args.tol, max_iter=args.max_iter)
    try:
        sim = simultaneous_loadability(case, args.step, cs, tol=args.tol, max_iter=args.max_iter)
        sim_summary = {"lambda_max": sim.lambda_max, "base_mw": sim.base_mw,
                       "total_achievable_mw": sim.total_mw, "additional_mw": sim.additional_mw,
                       "binding_constraint": sim.binding}
    except Exception as exc:  # BaseCaseInfeasible
        sim_summary = {"lambda_max": 1.0, "base_mw": case.total_p_load,
                       "total_achievable_mw": case.total_p_load, "additional_mw": 0.0,
                       "binding_constraint": f"base-infeasible: {exc}"}
    top = rank_candidates(records, min(args.top_n, len(records)))

    header = ["bus", "base_mw", "lambda_max", "additional_mw", "binding_constraint"]
    rows = [[r["bus"], _f4(r["base_mw"]), _f4(r["lambda_max"]), _f4(r["additional_mw"]),
             r["binding_constraint"]] for r in records_to_rows(records)]
    print(",".join(header))
    for row in rows:
        print(",".join(str(c) for c in row))
    print(f"simultaneous: lambda_max {_f4(sim_summary['lambda_max'])}, total achievable "
          f"{_f4(sim_summary['total_achievable_mw'])} MW "
          f"(+{_f4(sim_summary['additional_mw'])} MW), "
          f"binding: {sim_summary['binding_constraint']}")
    print(f"top {len(top)} candidates: " + ", ".join(f"{b} ({_f4(m)} MW)" for b, m in top))

    out = _out_dir(args)
    if out is not None:
        _write_csv(out / "loadability.csv", header, rows)
        _write_csv(out / "candidates.csv", ["rank", "bus", "additional_mw"],
                   [[k + 1, b, _f4(m)] for k, (b, m) in enumerate(top)])
        config = {"lambda_step": args.step, "v_min": args.vmin, "v_max": args.vmax,
                  "top_n": args.top_n, "tol": args.tol, "max_iter": args.max_iter,
                  "slack_limits": dataclasses.asdict(case.slack_limits)}
        _write_json(out / "loadability.json", {
            "manifest": _manifest(args, config), "case": _case_summary(case),
            "simultaneous": sim_summary,
            "candidates": [{"bus": b, "additional_mw": m} for b, m in top],
            "records": records_to_rows(records),
            "files": ["loadability.csv", "candidates.csv"]})
        _write_timing(out, "loadability", started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# allocate / evaluate
# ---------------------------------------------------------------------------

def _read_candidates(path: str) -> tuple[list[tuple[int, float]], float | None]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"candidates file not found: {path}", EXIT_CASE_NOT_FOUND) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"candidates file is not JSON: {exc}", EXIT_INVALID_INPUT) from None
    cands = [(int(c["bus"]), float(c["additional_mw"])) for c in data["candidates"]]
    cap = data.get("simultaneous", {}).get("total_achievable_mw")
    return cands, cap


def _profile_rows(case, profiles: dict[str, np.ndarray]):
    names = list(profiles)
    rows = [[int(b)] + [_f4(profiles[n][k]) for n in names] for k, b in enumerate(case.bus_ids)]
    return ["bus"] + names, rows


def _trial_dict(t) -> dict:
    return {"trial_index": t.trial_index,
            "dgs": [{"bus": d.bus, "p_mw": d.p_mw} for d in t.dgs],
            "f1_voltage_deviation_pu": t.f1, "f2_loss_mw": t.f2, "f_obj": t.f_obj,
            "v_min_pu": t.v_min, "v_min_bus": t.v_min_bus, "slack_p_mw": t.slack_p}


def cmd_allocate(args) -> int:
    started = time.perf_counter()
    case = _load(args)
    cap = args.cap
    if args.candidates_file:
        candidates, file_cap = _read_candidates(args.candidates_file)
        if cap is None and not args.no_cap:
            cap = file_cap
    elif args.candidates:
        buses = [int(b) for b in args.candidates.split(",") if b.strip()]
        candidates = [(b, 1.0) for b in buses]
        if args.sampling == MARGIN_WEIGHTED:
            log.info("inline candidates carry no margins; sampling them uniformly")
            args.sampling = "uniform"
    else:
        cs = ConstraintSet.from_case(case, args.stage1_vmin, args.stage1_vmax)
        records = network_loadability(case, args.step, cs)
        candidates = rank_candidates(records, min(args.top_n, len(records)))
        if cap is None and not args.no_cap:
            cap = simultaneous_loadability(case, args.step, cs).total_mw
    if args.no_cap:
        cap = None

    base = base_reference(case)
    profiles = {"no_dg": base.solution.v_mag}
    scenarios = []
    for n_dg in args.n_dg:
        try:
            config = AllocationConfig(
                candidate_buses=tuple(b for b, _ in candidates),
                candidate_margins=tuple(m for _, m in candidates),
                n_dg=n_dg, trials=args.trials, dg_size_bounds=(args.dg_min, args.dg_max),
                total_penetration_cap=cap, weights=(args.w1, 1.0 - args.w1),
                sampling=args.sampling, seed=args.seed, v_bounds=(args.vmin, args.vmax))
        except AllocationError as exc:
            raise CliError(str(exc), EXIT_INVALID_INPUT) from None
        try:
            result = run_monte_carlo(case, config, n_jobs=args.n_jobs)
        except NoFeasibleTrial as exc:
            raise CliError(f"{n_dg} DG: {exc}", EXIT_NO_FEASIBLE) from None
        except SamplingError as exc:
            raise CliError(str(exc), EXIT_INVALID_INPUT) from None
        best = result.best
        sol = solve(apply_dg(case, best.dgs))
        profiles[f"dg{n_dg}"] = sol.v_mag
        reduction = 100.0 * (1.0 - best.f2 / base.f2)
        print(f"{n_dg} DG: buses {', '.join(str(b) for b in best.buses)} | sizes "
              f"{', '.join(_f4(s) for s in best.sizes)} MW | loss {_f4(base.f2)} -> "
              f"{_f4(best.f2)} MW ({reduction:.2f}% reduction) | V_min {_f4(best.v_min)} at bus "
              f"{best.v_min_bus} | feasible {len(result.archive)}/{result.n_trials}")
        scenarios.append({
            "config": config.to_dict(),
            "best": _trial_dict(best),
            "table": {"n_dg": n_dg, "locations": list(best.buses), "sizes_mw": list(best.sizes),
                      "total_dg_mw": best.total_dg_mw, "loss_without_dg_mw": base.f2,
                      "loss_with_dg_mw": best.f2, "loss_reduction_pct": reduction,
                      "v_min_pu": best.v_min, "v_min_bus": best.v_min_bus},
            "archive": {"count": len(result.archive), "trials": result.n_trials,
                        "feasibility_rate": result.feasibility_rate,
                        "f_obj_min": best.f_obj,
                        "f_obj_median": float(np.median([t.f_obj for t in result.archive]))},
            "voltage_profile_pu": sol.v_mag,
        })

    out = _out_dir(args)
    if out is not None:
        header, rows = _profile_rows(case, profiles)
        _write_csv(out / "voltage_profile.csv", header, rows)
        config = {"n_dg": args.n_dg, "trials": args.trials, "seed": args.seed,
                  "weights": [args.w1, 1.0 - args.w1], "dg_size_bounds": [args.dg_min, args.dg_max],
                  "penetration_cap_mw": cap, "sampling": args.sampling,
                  "v_bounds": [args.vmin, args.vmax], "candidates": candidates,
                  "candidates_file": args.candidates_file, "top_n": args.top_n,
                  "lambda_step": args.step, "stage1_v_bounds": [args.stage1_vmin, args.stage1_vmax]}
        _write_json(out / "allocation.json", {
            "manifest": _manifest(args, config), "case": _case_summary(case),
            "base": {"f1_voltage_deviation_pu": base.f1, "f2_loss_mw": base.f2},
            "scenarios": scenarios, "files": ["voltage_profile.csv"]})
        _write_timing(out, "allocation", started)
    return EXIT_OK


def _parse_dg(spec: str) -> DGUnit:
    try:
        bus, mw = spec.split(":")
        return DGUnit(int(bus), float(mw))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected BUS:MW, got {spec!r}") from None


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    case = _load(args)
    dgs = list(args.dg or [])
    try:
        config = AllocationConfig(
            candidate_buses=tuple(d.bus for d in dgs) or (0,), n_dg=max(len(dgs), 1), trials=1,
            sampling="uniform", dg_size_bounds=(0.0, math.inf),
            weights=(args.w1, 1.0 - args.w1), v_bounds=(args.vmin, args.vmax))
        apply_dg(case, dgs)
    except AllocationError as exc:
        raise CliError(str(exc), EXIT_INVALID_INPUT) from None
    base = base_reference(case)
    if dgs:
        trial = evaluate_trial(case, dgs, config, base.normalizers)
        try:
            sol = solve(apply_dg(case, dgs), args.tol, args.max_iter)
        except NonConvergence as exc:
            raise CliError(str(exc), EXIT_NONCONVERGENCE) from None
    else:
        sol = base.solution
        trial = None
    f1 = voltage_deviation(sol)
    f2 = total_active_loss(sol, apply_dg(case, dgs))
    v_min, v_bus = sol.v_min()
    reduction = 100.0 * (1.0 - f2 / base.f2)
    in_band = bool(sol.v_mag.min() >= args.vmin and sol.v_mag.max() <= args.vmax)
    label = ", ".join(f"{d.bus}:{d.p_mw:g}" for d in dgs) or "none"
    print(f"DG units: {label}")
    print(f"f1 voltage deviation {_f4(f1)} p.u. (base {_f4(base.f1)})")
    print(f"f2 active loss       {_f4(f2)} MW (base {_f4(base.f2)})")
    print(f"loss reduction       {reduction:.2f}%")
    print(f"V_min                {_f4(v_min)} p.u. at bus {v_bus}")
    print(f"within {args.vmin:g}-{args.vmax:g} p.u.: {'yes' if in_band else 'no'}")
    if trial is not None and trial.feasible:
        print(f"F_obj                {_f4(trial.f_obj)} (w1={args.w1:g})")
    out = _out_dir(args)
    if out is not None:
        header, rows = _profile_rows(case, {"no_dg": base.solution.v_mag, "with_dg": sol.v_mag})
        _write_csv(out / "evaluate_profile.csv", header, rows)
        cfg = {"dgs": [{"bus": d.bus, "p_mw": d.p_mw} for d in dgs], "w1": args.w1,
               "v_bounds": [args.vmin, args.vmax], "tol": args.tol, "max_iter": args.max_iter}
        _write_json(out / "evaluate.json", {
            "manifest": _manifest(args, cfg), "case": _case_summary(case),
            "results": {"f1_voltage_deviation_pu": f1, "f2_loss_mw": f2,
                        "base_f1_pu": base.f1, "base_f2_mw": base.f2,
                        "loss_reduction_pct": reduction, "v_min_pu": v_min, "v_min_bus": v_bus,
                        "within_band": in_band,
                        "f_obj": trial.f_obj if trial is not None else None,
                        "voltage_profile_pu": sol.v_mag},
            "files": ["evaluate_profile.csv"]})
        _write_timing(out, "evaluate", started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radial-dg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", default="builtin:ieee33",
                        help="builtin:ieee33 or path to a MATPOWER-style case file")
    common.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV})")
    common.add_argument("--tol", type=float, default=DEFAULT_TOL)
    common.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    common.add_argument("--line-p-max", type=float, help="uniform branch MW limit")
    common.add_argument("--line-q-max", type=float, help="uniform branch MVAr limit")
    common.add_argument("--line-i-max", type=float, help="uniform branch current limit, p.u.")
    common.add_argument("--slack-p-max", type=float)
    common.add_argument("--slack-p-min", type=float)
    common.add_argument("--slack-q-max", type=float)
    common.add_argument("--slack-q-min", type=float)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pf", parents=[common], help="run the AC power flow")
    p.add_argument("--zero-loads", action="store_true", help="set every load to zero")
    p.add_argument("--vmin-report", type=float, default=0.95,
                   help="count buses below this voltage")
    p.set_defaults(func=cmd_pf)

    p = sub.add_parser("loadability", parents=[common], help="Stage 1 loadability sweep")
    p.add_argument("--step", type=float, default=DEFAULT_LAMBDA_STEP)
    p.add_argument("--vmin", type=float, default=STAGE1_V_MIN)
    p.add_argument("--vmax", type=float, default=STAGE1_V_MAX)
    p.add_argument("--top-n", type=int, default=10)
    p.set_defaults(func=cmd_loadability)

    p = sub.add_parser("allocate", parents=[common], help="Stage 2 Monte Carlo DG allocation")
    p.add_argument("--n-dg", type=int, nargs="+", default=[1])
    p.add_argument("--trials", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--w1", type=float, default=0.5,
                   help="weight of voltage deviation; loss weight is 1 - w1")
    p.add_argument("--dg-min", type=float, default=0.1)
    p.add_argument("--dg-max", type=float, default=3.5)
    p.add_argument("--cap", type=float, help="total DG MW cap (default: Stage-1 loadability)")
    p.add_argument("--no-cap", action="store_true", help="disable the penetration cap")
    p.add_argument("--sampling", choices=SAMPLING_SCHEMES, default=MARGIN_WEIGHTED)
    p.add_argument("--vmin", type=float, default=0.95)
    p.add_argument("--vmax", type=float, default=1.05)
    p.add_argument("--candidates-file", help="loadability.json from the loadability command")
    p.add_argument("--candidates", help="comma-separated candidate buses")
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--step", type=float, default=DEFAULT_LAMBDA_STEP)
    p.add_argument("--stage1-vmin", type=float, default=STAGE1_V_MIN)
    p.add_argument("--stage1-vmax", type=float, default=STAGE1_V_MAX)
    p.add_argument("--n-jobs", type=int)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a fixed DG configuration")
    p.add_argument("--dg", type=_parse_dg, action="append", metavar="BUS:MW")
    p.add_argument("--w1", type=float, default=0.5)
    p.add_argument("--vmin", type=float, default=0.95)
    p.add_argument("--vmax", type=float, default=1.05)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
