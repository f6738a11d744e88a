"""Command line entry point: ``bifluid <command> --scenario <path> [...]``.

Exit status is 0 when every certificate passes, 1 when some certificate
fails (the failure list is printed to stderr as JSON) and 2 for invalid
input.  Set ``BIFLUID_WORKERS`` to cap the number of sweep processes.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .coupling import energy_ledger, run_level1, sweep_delta, sweep_epsilon
from .diagnostics import (certify_run, domination_check, ratio_transport_residual,
                          weak_solution_ledgers)
from .output import (load_trajectory, save_trajectory, snapshot_indices, write_csv,
                     write_fields, write_json)
from .scenario import (ScenarioError, alpha_roundtrip_norms, hypothesis_report, load_scenario,
                       reconstruct_alpha)
from .transport import mass_ledger

COMMANDS = ("simulate", "sweep-eps", "sweep-delta", "certify", "alpha-roundtrip", "validate")


def _floats(text):
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _cells(text):
    return [int(t) for t in text.lower().split("x")]


def build_parser():
    p = argparse.ArgumentParser(prog="bifluid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", required=True,
                        help="scenario TOML file or bundled preset name")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--cells", type=_cells, default=None, help="cells, e.g. 200 or 40x20")
        sp.add_argument("--dt", type=float, default=None)
        sp.add_argument("--snapshots", type=int, default=None)
        if name == "sweep-eps":
            sp.add_argument("--eps-list", type=_floats, required=True)
        if name == "sweep-delta":
            sp.add_argument("--delta-list", type=_floats, required=True)
        if name == "certify":
            sp.add_argument("--trajectory", required=True, help="trajectory .npz from simulate")
    return p


def _outdir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(report_dict, failures):
    if failures:
        print(json.dumps({"ok": False, "failures": sorted(failures)}), file=sys.stderr)
        return 1
    return 0


def _timeseries(traj, scen, energy):
    ml = mass_ledger(traj)
    rt = ratio_transport_residual(traj, scen.ratio_floor)
    margins = [domination_check(f, scen.bounds)["min_margin"] for f in traj.fields]
    ke = np.concatenate([[0.0], np.cumsum(energy["terms"]["kinetic"])])
    he = np.concatenate([[0.0], np.cumsum(energy["terms"]["helmholtz"])])
    dfc = np.concatenate([[0.0], energy["cumulative_defect"]])
    its = np.concatenate([[0], traj.iterations])
    cfl = np.concatenate([[0.0], traj.cfl])
    header = (["step", "time"] + [f"mass_{s}" for s in traj.species]
              + ["kinetic_change", "helmholtz_change", "energy_defect", "iterations",
                 "domination_margin", "ratio_residual", "cfl"])
    rows = []
    for n in range(len(traj.times)):
        rows.append([n, traj.times[n], *ml["mass"][n], ke[n], he[n], dfc[n], its[n],
                     margins[n], rt[n], cfl[n]])
    return header, rows


def cmd_simulate(args, scen):
    out = _outdir(args, f"out-{scen.name}")
    traj, report = run_level1(scen)
    energy = energy_ledger(traj, scen.law, scen.bd)
    weak = weak_solution_ledgers(traj, scen, energy)
    floor = scen.ratio_floor
    snaps = snapshot_indices(traj.n_steps, args.snapshots or scen.snapshots)
    for n in snaps:
        write_fields(out / f"fields_{n:06d}.csv", traj, n, floor, scen.bd.u_cells)
    write_csv(out / "timeseries.csv", *_timeseries(traj, scen, energy))
    save_trajectory(out / "trajectory.npz", traj)
    rep = report.to_dict()
    rep["weak_solution_ledgers"] = weak.to_dict()
    rep["energy"] = {k: energy[k] for k in ("initial_energy", "kinetic_loss", "dissipation",
                                            "viscous_only", "min_defect_relative")}
    rep["scenario"] = scen.name
    rep["steps"] = traj.n_steps
    write_json(out / "report.json", rep)
    print(report.summary())
    return _finish(rep, report.failures() + weak.failures())


def cmd_certify(args, scen):
    traj = load_trajectory(args.trajectory, scen)
    report = certify_run(traj, scen)
    if args.out:
        write_json(_outdir(args, None) / "certificate.json", report.to_dict())
    print(report.summary())
    return _finish(report.to_dict(), report.failures())


def _sweep(args, scen, key, values):
    out = _outdir(args, f"out-{scen.name}-sweep-{key}")
    res = (sweep_epsilon if key == "eps" else sweep_delta)(scen, values)
    cols = sorted({k for r in res["rows"] for k in r})
    cols.remove(key)
    cols = [key] + cols
    write_csv(out / f"sweep_{key}.csv", cols, ([r.get(c, "") for c in cols] for r in res["rows"]))
    write_json(out / f"sweep_{key}.json", res)
    failures = [f"{key}={r[key]}" for r in res["rows"]
                if "error" in r or not r.get("certificates_ok", True)]
    for r in res["rows"]:
        print(json.dumps(r, sort_keys=True))
    return _finish(res, failures)


def cmd_alpha(args, scen):
    if scen.closure is None:
        raise ScenarioError([("closure", "alpha roundtrip needs a [closure] section")])
    out = _outdir(args, f"out-{scen.name}-alpha")
    traj, report = run_level1(scen)
    vol = scen.mesh.volumes
    res = {}
    for label, n in (("t0", 0), ("T", traj.n_steps)):
        rec = reconstruct_alpha(traj.fields[n], scen.closure)
        res[label] = alpha_roundtrip_norms(rec, vol)
    write_json(out / "alpha.json", res)
    print(json.dumps(res, sort_keys=True, indent=2))
    failures = report.failures()
    if res["t0"]["roundtrip"] > 1e-12:
        failures.append("alpha_roundtrip_t0")
    if not (res["t0"]["in_range"] and res["T"]["in_range"]):
        failures.append("alpha_range")
    return _finish(res, failures)


def cmd_validate(args, scen):
    rep = {"scenario": scen.name, "valid": True, "hypotheses": hypothesis_report(scen),
           "cells": list(scen.mesh.shape), "dt": scen.params.dt, "steps": scen.params.n_steps}
    if args.out:
        write_json(_outdir(args, None) / "validate.json", rep)
    print(json.dumps(rep, indent=2, sort_keys=True, default=float))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        scen = load_scenario(args.scenario, cells=args.cells, dt=args.dt)
        return _dispatch(args, scen)
    except ScenarioError as exc:
        print(json.dumps({"ok": False, "invalid_scenario": [
            {"hypothesis": t, "message": m} for t, m in exc.violations]}), file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(json.dumps({"ok": False, "error": str(exc)}), file=sys.stderr)
        return 2


def _dispatch(args, scen):
    if args.command == "simulate":
        return cmd_simulate(args, scen)
    if args.command == "certify":
        return cmd_certify(args, scen)
    if args.command == "sweep-eps":
        return _sweep(args, scen, "eps", args.eps_list)
    if args.command == "sweep-delta":
        return _sweep(args, scen, "delta", args.delta_list)
    if args.command == "alpha-roundtrip":
        return cmd_alpha(args, scen)
    return cmd_validate(args, scen)


if __name__ == "__main__":
    sys.exit(main())
