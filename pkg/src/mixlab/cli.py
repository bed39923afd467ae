"""Command line front end: audit -> solve -> verify pipelines over scenario files.

Exit codes: 0 ok, 2 hypothesis failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import degiorgi as dg
from . import harnack as hk
from .errors import (
    LadderExhausted,
    MixlabError,
    NoFeasibleDelta,
    NoFeasibleTau,
    NotApplicable,
    ScenarioError,
    SeedConditionFailed,
)
from .reports import (
    EXACT_SOLUTIONS,
    dumps_json,
    flatten,
    write_csv,
    write_json,
    write_solution_binary,
    write_solution_csv,
)
from .scenarios import LoadedScenario, bundled_path, load_scenario
from .solver import solve
from .weights import run_weight_audit

EXIT_OK = 0
EXIT_HYPOTHESIS = 2
EXIT_NUMERICAL = 3

_HYPOTHESIS_ERRORS = (NoFeasibleDelta, NoFeasibleTau, SeedConditionFailed,
                      LadderExhausted, NotApplicable)


def _resolve(path):
    p = Path(path)
    if p.exists():
        return p
    try:
        return bundled_path(str(path))
    except ScenarioError:
        raise ScenarioError(f"scenario {path!r} not found on disk or bundled")


def _out_dir(args):
    d = Path(args.out or os.environ.get("MIXLAB_OUT", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def cmd_weights_audit(args):
    sc = load_scenario(_resolve(args.scenario))
    audit = run_weight_audit(
        sc.mu, sc.lam, sc.ball_family(),
        q=float(sc.audit.get("q", 4.0)),
        subset_samples=int(sc.audit.get("subset_samples", 16)),
        eps_list=sc.audit.get("eps_list", (0.2, 0.1, 0.05)),
        zero_tol=float(sc.audit.get("zero_tol", 0.0)),
        delta_grid=sc.audit.get("delta_grid", (0.05, 0.1, 0.2, 0.4, 0.8)),
        seed=int(sc.audit.get("seed", 0)),
        doubling_balls=sc.doubling_family(),
    )
    payload = {
        "scenario": sc.name,
        "config_hash": sc.config_hash(),
        "records": audit.to_records(),
        "doubling_unbounded": audit.doubling_unbounded,
    }
    out = dumps_json(payload)
    if args.out:
        d = _out_dir(args)
        (d / f"{sc.name}_audit.json").write_text(out)
    sys.stdout.write(out)
    qmax = float(sc.audit.get("doubling_qmax", float("inf")))
    if audit.doubling_unbounded or (audit.region_doubling is not None and audit.region_doubling > qmax):
        print(f"hypothesis failure: doubling line constant {audit.region_doubling:g} "
              f"exceeds {qmax:g}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _solve_one(path, out_dir):
    sc = load_scenario(path)
    if sc.scenario is None:
        raise ScenarioError(f"scenario {sc.name!r} declares no [data]; nothing to solve")
    field, report = solve(sc.scenario)
    exact = EXACT_SOLUTIONS.get(sc.exact) if sc.exact else None
    base = Path(out_dir) / sc.name
    write_solution_csv(f"{base}_solution.csv", field, exact)
    write_solution_binary(f"{base}_solution.bin", field)
    payload = {"scenario": sc.name, "config_hash": sc.config_hash(),
               "residual_norm": report.residual_norm,
               "system_size": report.system_size, "nnz": report.nnz,
               "data_rows": report.data_rows}
    if exact is not None:
        errs = [np.max(np.abs(field.slice(n) - exact(sc.grid.centers(), t)))
                for n, t in enumerate(sc.grid.times())]
        payload["max_error_vs_exact"] = float(np.max(errs))
    write_json(f"{base}_solve.json", payload)
    return payload


def cmd_solve(args):
    d = _out_dir(args)
    paths = [_resolve(s) for s in args.scenario]
    if args.jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            payloads = list(ex.map(_solve_one, paths, [d] * len(paths)))
    else:
        payloads = [_solve_one(p, d) for p in paths]
    for p in payloads:
        sys.stdout.write(dumps_json(p))
        if p["residual_norm"] > 1e-10:
            return EXIT_NUMERICAL
    return EXIT_OK


def _anchor(sc: LoadedScenario):
    q = sc.queries
    point = tuple(float(v) for v in q.get("point", [0.5] * sc.grid.dim))
    t = float(q.get("t", 0.5 * sc.grid.T))
    rho = float(q.get("rho", 0.1))
    return point, t, rho


def cmd_verify(args):
    sc = load_scenario(_resolve(args.scenario))
    point, t, rho = _anchor(sc)
    if args.at:
        point = tuple(float(v) for v in args.at.split(","))
    if args.t is not None:
        t = args.t
    if args.rho is not None:
        rho = args.rho
    case = args.case or sc.queries.get("case", "i")
    beta = float(sc.queries.get("beta", 1.0))
    payload = {"scenario": sc.name, "config_hash": sc.config_hash(),
               "which": args.which, "case": case}

    def solved(scn):
        field, rep = solve(scn.scenario)
        return field, rep

    if args.which == "degiorgi":
        field, rep = solved(sc)
        pw = sc.weights()
        R = min(2 * rho, 0.45 * min(sc.grid.extent))
        sweep = dg.default_sweep(pw, point, t, R, beta=beta)
        report = dg.gamma_fit(field, sweep)
        payload.update({"gamma": report.gamma, "records": len(report.records),
                        "verdict": report.verdict(),
                        "residual": rep.residual_norm})
        if args.out:
            d = _out_dir(args)
            write_csv(d / f"{sc.name}_energy_records.csv",
                      ["ineq_id", "sign", "k", "lhs", "rhs", "implied_gamma"],
                      [[r["ineq"], r["sign"], r["k"], r["lhs"], r["rhs"],
                        r["implied_gamma"]] for r in report.records])
        if args.refine:
            sc2 = load_scenario(_resolve(args.scenario))
            sc2 = _refined(sc2)
            field2, _ = solve(sc2.scenario)
            pw2 = sc2.weights()
            rep2 = dg.gamma_fit(field2, dg.default_sweep(pw2, point, t, R, beta=beta))
            payload["gamma_refined"] = rep2.gamma
            payload["refinement_ratio"] = rep2.gamma / report.gamma if report.gamma else None
    elif args.which == "harnack":
        field, _ = solved(sc)
        pw = sc.weights()
        thetas = [args.theta] if args.theta is not None else \
            [float(v) for v in sc.queries.get("theta_ladder", [1.0])]
        rows = []
        for th in thetas:
            if case == "mixed":
                rep = hk.harnack_mixed(field, hk.HarnackQuery(
                    x_o=point, t_o=t, rho=rho, theta=th, case="mixed"), pw)
            else:
                rep = hk.harnack_constant(field, hk.HarnackQuery(
                    x_o=point, t_o=t, rho=rho, theta=th,
                    omega=float(sc.queries.get("omega", 1.0)), case=case), pw)
            rows.append({"theta": th, "ratio": rep.ratio,
                         "value": rep.value_at_point, "inf": rep.inf_over_target,
                         "equivalent_ratio": rep.equivalent_ratio})
        payload["ratios"] = rows
    elif args.which == "holder":
        field, _ = solved(sc)
        pw = sc.weights()
        radii = sc.queries.get("holder_radii") or [rho * s for s in (0.5, 0.75, 1.0, 1.5)]
        res = hk.holder_exponent(field, point, t, radii, pw)
        payload.update({"alpha_hat": res["alpha_hat"], "r_squared": res["r_squared"],
                        "radii": res["radii"], "osc": res["osc"]})
        if args.out:
            d = _out_dir(args)
            write_csv(d / f"{sc.name}_oscillation.csv",
                      ["rho", "osc", "window"],
                      [[r, o, r * r * pw.h(point, r)]
                       for r, o in zip(res["radii"], res["osc"])])
    elif args.which == "maxprin":
        field, _ = solved(sc)
        pw = sc.weights()
        res = hk.max_principle_check(field, point, t, args.theta or 1.0, rho, pw)
        payload.update(res)
    out = dumps_json(payload)
    if args.out:
        d = _out_dir(args)
        (d / f"{sc.name}_{args.which}.json").write_text(out)
    sys.stdout.write(out)
    return EXIT_OK


def _refined(sc: LoadedScenario) -> LoadedScenario:
    raw = dict(sc.raw)
    grid = dict(raw["grid"])
    grid["shape"] = [2 * int(v) for v in grid["shape"]]
    grid["time_steps"] = 2 * int(grid.get("time_steps", 1))
    raw["grid"] = grid
    from .scenarios import dump_toml
    return load_scenario(dump_toml(raw))


def cmd_report(args):
    run = Path(args.run_dir)
    files = sorted(run.glob("*.json"))
    if not files:
        print(f"no reports found in {run}", file=sys.stderr)
        return EXIT_NUMERICAL
    import json as _json
    merged = {}
    for f in files:
        merged[f.stem] = _json.loads(f.read_text())
    d = _out_dir(args)
    write_json(d / "consolidated.json", merged)
    rows = []
    for stem in sorted(merged):
        for key, val in flatten(merged[stem]):
            rows.append([stem, key, val])
    write_csv(d / "consolidated.csv", ["source", "key", "value"], rows)
    print(f"wrote consolidated.json and consolidated.csv for {len(files)} reports")
    return EXIT_OK


# ----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="mixlab",
        description="numerical laboratory for mixed-type degenerate evolution equations")
    sub = p.add_subparsers(dest="command", required=True)

    pw = sub.add_parser("weights", help="weight hypothesis audits")
    sw = pw.add_subparsers(dest="subcommand", required=True)
    pa = sw.add_parser("audit", help="run the full weight audit")
    pa.add_argument("scenario")
    pa.add_argument("--out", default=None)
    pa.set_defaults(func=cmd_weights_audit)

    ps = sub.add_parser("solve", help="solve scenarios and dump solutions")
    ps.add_argument("scenario", nargs="+")
    ps.add_argument("--out", default=None)
    ps.add_argument("--jobs", type=int, default=1)
    ps.set_defaults(func=cmd_solve)

    pv = sub.add_parser("verify", help="verification pipelines on solved fields")
    pv.add_argument("which", choices=["degiorgi", "harnack", "holder", "maxprin"])
    pv.add_argument("scenario")
    pv.add_argument("--case", default=None)
    pv.add_argument("--theta", type=float, default=None)
    pv.add_argument("--at", default=None, help="query point, comma separated")
    pv.add_argument("--rho", type=float, default=None)
    pv.add_argument("--t", type=float, default=None)
    pv.add_argument("--refine", action="store_true")
    pv.add_argument("--out", default=None)
    pv.set_defaults(func=cmd_verify)

    pr = sub.add_parser("report", help="consolidate a run directory")
    pr.add_argument("run_dir")
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _HYPOTHESIS_ERRORS as exc:
        print(f"hypothesis failure: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except MixlabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
