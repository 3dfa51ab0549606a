"""Configuration-driven command line for the thin-shell Korn laboratory.

``run`` executes a JSON experiment config and writes machine-readable
reports (summary.json, task CSVs, run_report.json) into the output
directory.  ``describe`` prints the resolved plan without computing.
The named subcommands are shorthands that assemble a config from flags and
dispatch to the same runner.  All randomness flows from config seeds; a
rerun of an unchanged config reproduces the numerical outputs byte for
byte.  The sweep cache directory defaults to <output>/cache and can be
overridden with the KORNLAB_CACHE environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (SWEEPABLE, TASKS, config_hash, load_config,
                     resolution_tuple, validate_config)
from .constructions import (counterexample_energies, inequality_ratios,
                            sample_field)
from .discretization import ConstraintSpec, build_grid
from .errors import ConfigurationError, KornLabError
from .geometry import (ShellDomain, profile_from_config, surface_from_config)
from .killing import bochner_check, killing_basis, restrict_profile
from .spectra import (SweepCache, fit_loglog, korn_constant,
                      poincare_constant, sweep, trace_constant)


def _fmt(x):
    return repr(float(x))


def _surface(cfg):
    return surface_from_config(cfg["surface"])


def _shell(cfg, h):
    surface = _surface(cfg)
    profile = profile_from_config(cfg["profile"], surface)
    return ShellDomain(surface, profile, float(h))


def _scenario(cfg):
    sc = cfg.get("scenario", {})
    return ConstraintSpec(tangency=sc.get("tangency", "none"),
                          orthogonality=sc.get("orthogonality", "none"),
                          alpha=sc.get("alpha", 0.0))


def _write_json(path, payload):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow(row)


# ----------------------------------------------------------------------
# task runners: each returns (summary payload, extra output files)
# ----------------------------------------------------------------------

def _run_korn_constant(cfg, outdir, cache_dir):
    shell = _shell(cfg, cfg["h"])
    res = korn_constant(shell, resolution_tuple(cfg, with_nt=True),
                        _scenario(cfg))
    return {"task": "korn-constant", "h": cfg["h"],
            "result": res.as_dict()}, []


def _run_killing(cfg, outdir, cache_dir):
    surface = _surface(cfg)
    resolution = resolution_tuple(cfg, with_nt=False)
    basis = killing_basis(surface, resolution)
    payload = {
        "dim": basis.dim,
        "eigenvalues": [float(v) for v in basis.eigenvalues],
        "gap": basis.gap if math.isfinite(basis.gap) else "infinite",
        "bochner": None,
    }
    if basis.dim > 0:
        rep = bochner_check(surface, basis.member(0), resolution)
        payload["bochner"] = rep.as_dict()
    return payload, []


def _run_counterexample(cfg, outdir, cache_dir):
    kind = cfg.get("field", "extend")
    resolution = resolution_tuple(cfg, with_nt=True)
    rows = []
    for h in cfg["h_list"]:
        grid = build_grid(_shell(cfg, h), resolution)
        rows.append(counterexample_energies(grid, kind))
    csv_path = outdir / "counterexample.csv"
    _write_csv(csv_path, ["h", "D_energy", "grad_energy", "quotient"],
               [[_fmt(r["h"]), _fmt(r["D_energy"]), _fmt(r["grad_energy"]),
                 _fmt(r["quotient"])] for r in rows])
    payload = {"task": "counterexample", "field": kind, "rows": rows}
    if len(rows) >= 3:
        finite = [r for r in rows if math.isfinite(r["quotient"])]
        if len(finite) >= 3:
            hs = [r["h"] for r in finite]
            payload["slopes"] = {
                key: dict(zip(("slope", "residual"),
                              fit_loglog(hs, [r[key] for r in finite])))
                for key in ("D_energy", "grad_energy", "quotient")
                if all(r[key] > 0 for r in finite)
            }
    return payload, [csv_path]


def _run_lemmas(cfg, outdir, cache_dir):
    from scipy.stats import kendalltau

    resolution = resolution_tuple(cfg, with_nt=True)
    scenario = _scenario(cfg)
    h_values = cfg.get("h_list") or [cfg["h"]]
    seeds = cfg["seeds"]
    csv_rows = []
    series = {}
    for h in h_values:
        grid = build_grid(_shell(cfg, h), resolution)
        for seed in seeds:
            field = sample_field(grid, seed, scenario)
            report = inequality_ratios(grid, field, scenario)
            for name, entry in report.ratios.items():
                series.setdefault(name, []).append((1.0 / h, entry.ratio))
                csv_rows.append([_fmt(h), seed, name, _fmt(entry.lhs),
                                 _fmt(entry.rhs), _fmt(entry.ratio)])
    csv_path = outdir / "ratios.csv"
    _write_csv(csv_path, ["h", "seed", "name", "lhs", "rhs", "ratio"],
               csv_rows)
    summary = {}
    for name, pts in series.items():
        entry = {"max_ratio": max(p[1] for p in pts), "count": len(pts)}
        if len({p[0] for p in pts}) >= 2 and len(pts) >= 3:
            tau = kendalltau([p[0] for p in pts],
                             [p[1] for p in pts]).statistic
            entry["kendall_tau_vs_inverse_h"] = float(tau)
        summary[name] = entry
    return {"task": "lemmas", "h_list": h_values, "seeds": seeds,
            "ratios": summary}, [csv_path]


def _run_poincare(cfg, outdir, cache_dir):
    res = poincare_constant(_shell(cfg, cfg["h"]),
                            resolution_tuple(cfg, with_nt=True))
    return {"task": "poincare", "h": cfg["h"], "result": res.as_dict()}, []


def _run_trace(cfg, outdir, cache_dir):
    res = trace_constant(_shell(cfg, cfg["h"]),
                         resolution_tuple(cfg, with_nt=True))
    return {"task": "trace", "h": cfg["h"], "result": res.as_dict()}, []


def _sweep_value(cfg, task, h):
    resolution = resolution_tuple(cfg, with_nt=True)
    if task == "korn-constant":
        res = korn_constant(_shell(cfg, h), resolution, _scenario(cfg))
        value = res.constant if not res.degenerate else math.inf
        return {"value": value, "degenerate": res.degenerate,
                "eigenvalue": float(res.eigenvalues[0])}
    if task == "counterexample":
        grid = build_grid(_shell(cfg, h), resolution)
        row = counterexample_energies(grid, cfg.get("field", "extend"))
        return {"value": row["quotient"], "D_energy": row["D_energy"],
                "grad_energy": row["grad_energy"]}
    if task == "poincare":
        return {"value": poincare_constant(_shell(cfg, h),
                                           resolution).constant}
    if task == "trace":
        return {"value": trace_constant(_shell(cfg, h), resolution).constant}
    raise ConfigurationError(f"unsweepable task: {task!r}")


def _run_sweep(cfg, outdir, cache_dir):
    task = cfg["sweep_task"]
    cache = SweepCache(cache_dir, config_hash(cfg, exclude=("h_list",)))
    report = sweep(lambda h: _sweep_value(cfg, task, h), cfg["h_list"],
                   descriptor={"sweep_task": task}, cache=cache)
    csv_rows = []
    for i, row in enumerate(report.rows):
        partial = [r for r in report.rows[:i + 1]
                   if math.isfinite(r["value"]) and r["value"] > 0]
        if len(partial) >= 3:
            slope = fit_loglog([r["h"] for r in partial],
                               [r["value"] for r in partial])[0]
            slope_txt = _fmt(slope)
        else:
            slope_txt = ""
        csv_rows.append([_fmt(row["h"]), _fmt(row["value"]), slope_txt])
    csv_path = outdir / "sweep.csv"
    _write_csv(csv_path, ["h", "value", "slope_so_far"], csv_rows)
    payload = report.as_dict()
    payload["task"] = "sweep"
    return payload, [csv_path]


_RUNNERS = {
    "korn-constant": _run_korn_constant,
    "killing": _run_killing,
    "counterexample": _run_counterexample,
    "lemmas": _run_lemmas,
    "poincare": _run_poincare,
    "trace": _run_trace,
    "sweep": _run_sweep,
}


def execute(cfg, outdir, cache_dir=None, dump_nodes=False):
    """Run a validated config; writes summary.json and run_report.json."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if cache_dir is None:
        cache_dir = os.environ.get("KORNLAB_CACHE", str(outdir / "cache"))
    start = time.monotonic()
    payload, files = _RUNNERS[cfg["task"]](cfg, outdir, cache_dir)
    summary_path = outdir / "summary.json"
    _write_json(summary_path, payload)
    files = [summary_path] + list(files)
    if dump_nodes and "resolution" in cfg and "nt" in cfg["resolution"]:
        h = cfg.get("h") or cfg["h_list"][0]
        grid = build_grid(_shell(cfg, h),
                          resolution_tuple(cfg, with_nt=True))
        node_path = outdir / "nodes.csv"
        grid.dump_node_table(node_path)
        files.append(node_path)
    report = {
        "config_hash": config_hash(cfg),
        "tool_version": __version__,
        "task": cfg["task"],
        "outputs": [str(p.name) for p in files],
        "timings": {"total_s": time.monotonic() - start},
    }
    _write_json(outdir / "run_report.json", report)
    return payload


def describe(cfg, stream=None):
    """Print the resolved plan (grids, DOFs, constraints, solver cost)."""
    stream = stream if stream is not None else sys.stdout
    task = cfg["task"]
    surface = _surface(cfg)
    print(f"task: {task}", file=stream)
    print(f"surface: {surface.kind} "
          f"(ambient dim {surface.ambient_dim})", file=stream)
    h_values = cfg.get("h_list") or ([cfg["h"]] if "h" in cfg else [])
    if h_values:
        print(f"h values: {h_values}", file=stream)
    res = cfg.get("resolution", {})
    shell_task = task not in ("killing",)
    if shell_task and "nt" in res:
        dims = resolution_tuple(cfg, with_nt=True)
        n_surf = int(np.prod(dims[:-1]))
        n_nodes = n_surf * dims[-1]
        ndof = n_nodes * surface.ambient_dim
        print(f"shell grid: {'x'.join(map(str, dims))} -> {n_nodes} nodes, "
              f"{ndof} vector DOFs", file=stream)
        scenario = _scenario(cfg) if "scenario" in cfg else None
        reduced = ndof
        if scenario is not None:
            n_sides = len(scenario.sides)
            reduced = ndof - n_sides * n_surf
            print(f"tangency '{scenario.tangency}': removes "
                  f"{n_sides * n_surf} boundary DOFs -> {reduced}",
                  file=stream)
            if scenario.orthogonality in ("killing", "killing-profile"):
                pencil_dofs = n_surf * surface.n_params
                print(f"orthogonality '{scenario.orthogonality}': computes "
                      f"the surface Killing basis first "
                      f"({pencil_dofs} pencil DOFs)", file=stream)
                if pencil_dofs <= 2048:
                    basis = killing_basis(surface, dims[:-1])
                    if scenario.orthogonality == "killing-profile":
                        profile = profile_from_config(cfg["profile"], surface)
                        basis = restrict_profile(basis, profile)
                    print(f"  Killing basis dimension: {basis.dim}",
                          file=stream)
                    reduced -= basis.dim
                else:
                    print("  (dimension computed at run time)", file=stream)
            elif scenario.orthogonality == "rigid":
                print("orthogonality 'rigid': boundary-tangent rigid fields "
                      "removed at run time", file=stream)
        if task in ("korn-constant", "sweep"):
            per_solve = 10.0 * reduced ** 3 / 5e9
            n_solves = max(len(h_values), 1)
            print(f"dense eigensolve estimate: ~{per_solve:.1f} s per solve "
                  f"x {n_solves} solve(s)", file=stream)
    elif task == "killing":
        dims = resolution_tuple(cfg, with_nt=False)
        n_surf = int(np.prod(dims))
        print(f"surface grid: {'x'.join(map(str, dims))} -> "
              f"{surface.n_params * n_surf} tangent DOFs "
              f"(= {surface.n_params} x {' x '.join(map(str, dims))})",
              file=stream)
    if task == "lemmas":
        print(f"seeds: {cfg['seeds']}", file=stream)
    print("outputs: summary.json"
          + {"counterexample": ", counterexample.csv",
             "lemmas": ", ratios.csv",
             "sweep": ", sweep.csv"}.get(task, ""), file=stream)


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def _parse_resolution(text):
    parts = text.replace("x", ",").split(",")
    dims = [int(p) for p in parts if p]
    keys = ("n1", "n2", "nt")
    if len(dims) == 2:
        return {"n1": dims[0], "nt": dims[1]}
    if len(dims) == 3:
        return {"n1": dims[0], "n2": dims[1], "nt": dims[2]}
    if len(dims) == 1:
        return {"n1": dims[0]}
    raise ConfigurationError(f"cannot parse resolution {text!r}")


def _parse_surface_resolution(text):
    parts = [int(p) for p in text.replace("x", ",").split(",") if p]
    if len(parts) == 1:
        return {"n1": parts[0]}
    if len(parts) == 2:
        return {"n1": parts[0], "n2": parts[1]}
    raise ConfigurationError(f"cannot parse resolution {text!r}")


def _parse_h_list(text):
    return [float(p) for p in text.split(",") if p]


def _parse_seeds(text):
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def _load_surface_config(path):
    try:
        with open(path) as fh:
            block = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read surface config: {exc}") \
            from exc
    if "surface" not in block:
        raise ConfigurationError("surface config needs a 'surface' object")
    return block


def _add_common(parser, with_output=True):
    parser.add_argument("--surface-config", required=True,
                        help="JSON file with the surface/profile block")
    if with_output:
        parser.add_argument("-o", "--output", default=".",
                            help="output directory (default: .)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kornlab",
        description="Korn-Poincare constants on thin shells: eigensolves, "
                    "explicit constructions, and scaling sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a JSON experiment config")
    p.add_argument("config")
    p.add_argument("-o", "--output", default=".")
    p.add_argument("--dump-nodes", action="store_true",
                   help="also write the shell node table as CSV")

    p = sub.add_parser("describe", help="print the plan without computing")
    p.add_argument("config")

    p = sub.add_parser("korn-constant", help="optimal Korn constant")
    _add_common(p)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--resolution", required=True)
    p.add_argument("--tangency", default="both",
                   choices=["none", "plus", "minus", "both"])
    p.add_argument("--orthogonality", default="none",
                   choices=["none", "rigid", "killing", "killing-profile"])
    p.add_argument("--alpha", type=float, default=0.0)

    p = sub.add_parser("killing", help="Killing basis dimension and spectrum")
    _add_common(p)
    p.add_argument("--resolution", required=True,
                   help="surface grid sizes, e.g. 64 or 16x32")

    p = sub.add_parser("counterexample",
                       help="energies of the push-forward extension")
    _add_common(p)
    p.add_argument("--h-list", required=True)
    p.add_argument("--resolution", required=True)
    p.add_argument("--field", default="extend",
                   choices=["extend", "trivial"])

    p = sub.add_parser("lemmas", help="thin-shell inequality ratio suite")
    _add_common(p)
    p.add_argument("--h-list", required=True)
    p.add_argument("--resolution", required=True)
    p.add_argument("--tangency", default="both",
                   choices=["plus", "minus", "both"])
    p.add_argument("--seeds", default="0-9")

    for name, helptext in (("poincare", "uniform Poincare constant"),
                           ("trace", "uniform boundary trace constant")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--h", type=float, required=True)
        p.add_argument("--resolution", required=True)

    p = sub.add_parser("sweep", help="h-sweep of a scalar task with "
                                     "log-log exponent fit")
    _add_common(p)
    p.add_argument("--task", required=True, choices=list(SWEEPABLE))
    p.add_argument("--h-list", required=True)
    p.add_argument("--resolution", required=True)
    p.add_argument("--tangency", default="both",
                   choices=["none", "plus", "minus", "both"])
    p.add_argument("--orthogonality", default="none",
                   choices=["none", "rigid", "killing", "killing-profile"])
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--field", default="extend", choices=["extend", "trivial"])
    return parser


def _config_from_args(args):
    block = _load_surface_config(args.surface_config)
    cfg = {"surface": block["surface"]}
    if "profile" in block:
        cfg["profile"] = block["profile"]
    command = args.command
    if command == "killing":
        cfg["task"] = "killing"
        cfg["resolution"] = _parse_surface_resolution(args.resolution)
        cfg.pop("profile", None)
        return cfg
    cfg["resolution"] = _parse_resolution(args.resolution)
    if command == "korn-constant":
        cfg.update(task="korn-constant", h=args.h,
                   scenario={"tangency": args.tangency,
                             "orthogonality": args.orthogonality,
                             "alpha": args.alpha})
    elif command == "counterexample":
        cfg.update(task="counterexample", h_list=_parse_h_list(args.h_list),
                   field=args.field)
    elif command == "lemmas":
        cfg.update(task="lemmas", h_list=_parse_h_list(args.h_list),
                   scenario={"tangency": args.tangency},
                   seeds=_parse_seeds(args.seeds))
    elif command in ("poincare", "trace"):
        cfg.update(task=command, h=args.h)
    elif command == "sweep":
        cfg.update(task="sweep", sweep_task=args.task,
                   h_list=_parse_h_list(args.h_list))
        if args.task == "korn-constant":
            cfg["scenario"] = {"tangency": args.tangency,
                               "orthogonality": args.orthogonality,
                               "alpha": args.alpha}
        if args.task == "counterexample":
            cfg["field"] = args.field
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            execute(cfg, args.output, dump_nodes=args.dump_nodes)
        elif args.command == "describe":
            cfg = load_config(args.config)
            describe(cfg)
        else:
            cfg = validate_config(_config_from_args(args))
            payload = execute(cfg, args.output)
            print(json.dumps(payload, sort_keys=True, indent=2))
    except ConfigurationError as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}),
              file=sys.stderr)
        return 2
    except KornLabError as exc:
        print(json.dumps({"error": "numerical",
                          "kind": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
