"""Command-line entry point: scenario runner and direct module access.

Subcommands: ``list``, ``run``, ``classify``, ``convtail``, ``stopped``,
``simulate``, ``pathological``, ``branching``.  Results are written as a CSV
table plus a JSON summary that embeds the fully resolved configuration, so a
bundle can be re-run bit-identically from its own summary.

Exit codes: 0 success, 2 validation error, 3 resource budget exceeded,
4 invalid estimate.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, classify, pathological, tailcalc
from .dist import discretize, parse_spec
from .errors import (
    DivergenceError,
    InapplicableError,
    InvalidEstimateError,
    ResourceBudgetError,
    ValidationError,
)
from .scenarios import Scenario, bundled_scenarios, load_scenario, run_scenario

_TINY = 1e-12


def _jsonable(obj):
    """JSON form with exact decimal strings for probabilities below 1e-12."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if not math.isfinite(f):
            return repr(f)  # strict JSON has no inf/nan literals
        if 0.0 < abs(f) < _TINY:
            return format(f, ".17e")
        return f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _format_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_bundle(out_dir: Path, name: str, rows, summary) -> Path:
    """Atomically write results.csv and summary.json under out_dir/name."""
    target = out_dir / name
    tmp = Path(tempfile.mkdtemp(dir=out_dir, prefix=f".{name}."))
    try:
        if rows:
            cols = list(rows[0].keys())
            with open(tmp / "results.csv", "w") as fh:
                fh.write(",".join(cols) + "\n")
                for row in rows:
                    fh.write(",".join(_format_cell(row[c]) for c in cols) + "\n")
        with open(tmp / "summary.json", "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if target.exists():
            for old in target.iterdir():
                old.unlink()
            target.rmdir()
        tmp.replace(target)
    finally:
        if tmp.exists():
            for leftover in tmp.iterdir():
                leftover.unlink()
            tmp.rmdir()
    return target


def _emit(args, name, rows, summary) -> None:
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = write_bundle(out, name, rows, summary)
        print(f"wrote {path}/results.csv and summary.json")
    else:
        if rows:
            cols = list(rows[0].keys())
            print(",".join(cols))
            for row in rows:
                print(",".join(_format_cell(row[c]) for c in cols))
        print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))


def _resolve_scenario(token: str) -> Scenario:
    if os.path.exists(token):
        return load_scenario(token)
    catalog = bundled_scenarios()
    if token in catalog:
        return catalog[token]
    raise ValidationError(f"no scenario file or bundled scenario named {token!r}")


def _apply_overrides(sc: Scenario, args) -> Scenario:
    if getattr(args, "seed", None) is not None:
        sc.config["mc"]["seed"] = str(args.seed)
    if getattr(args, "samples", None) is not None:
        sc.config["mc"]["samples"] = str(args.samples)
    if getattr(args, "tolerance", None) is not None:
        sc.config["numerics"]["tolerance"] = str(args.tolerance)
    return sc


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_list(args) -> int:
    catalog = bundled_scenarios()
    for name, sc in catalog.items():
        print(f"{name:40s} {sc.description}")
    return 0


def _cmd_run(args) -> int:
    sc = _apply_overrides(_resolve_scenario(args.scenario), args)
    rows, summary = run_scenario(sc)
    summary["version"] = __version__
    _emit(args, sc.name, rows, summary)
    if summary.get("mc", {}).get("valid") is False or summary.get("valid") is False:
        return 4
    return 0


def _cmd_classify(args) -> int:
    d = parse_spec(args.dist)
    grid = np.geomspace(args.x_start, args.x_stop, args.x_count) \
        if args.x_start else None
    report = classify.classify_report(d, grid, lattice_step=args.step,
                                      tolerance=args.tolerance or 0.05)
    summary = {"distribution": d.spec_string(), "classes": report}
    _emit(args, "classify", [], summary)
    return 0


def _cmd_convtail(args) -> int:
    from .dist import LatticeDistribution
    d = parse_spec(args.dist)
    if isinstance(d, LatticeDistribution):
        lat = d
    elif args.step is not None:
        lat = discretize(d, args.step, args.x_max)
    else:
        raise ValidationError("convtail needs a lattice; pass --step")
    if args.cache_dir:
        grid = tailcalc.cached_conv_power(lat, args.n, args.x_max, args.cache_dir)
    else:
        grid = tailcalc.conv_power_tail(lat, args.n, x_hi=args.x_max)
    xs = (np.asarray([float(v) for v in args.x], dtype=float)
          if args.x else grid.x_start + np.arange(grid.log_tail.size) * grid.step)
    rows = [{"x": float(x), "log_tail": float(grid.log_tail_at(float(x)))}
            for x in xs]
    summary = {"n": args.n, "step": lat.step, "valid_to": grid.valid_to,
               "overflow_log_mass": grid.overflow_log_mass}
    _emit(args, f"convtail_n{args.n}", rows, summary)
    return 0


def _cmd_stopped(args) -> int:
    sc = _apply_overrides(_resolve_scenario(args.scenario), args)
    if sc.task != "stopped":
        raise ValidationError(f"scenario {sc.name!r} is a {sc.task!r} task")
    rows, summary = run_scenario(sc)
    summary["version"] = __version__
    _emit(args, sc.name, rows, summary)
    return 0


def _cmd_simulate(args) -> int:
    sc = _apply_overrides(_resolve_scenario(args.scenario), args)
    if sc.task not in ("simulate", "stopped"):
        raise ValidationError(f"scenario {sc.name!r} is a {sc.task!r} task")
    sc.config["scenario"]["task"] = "simulate"
    if sc.config["scenario"]["method"] == "exact":
        sc.config["scenario"]["method"] = "both"
    rows, summary = run_scenario(sc)
    summary["version"] = __version__
    _emit(args, sc.name, rows, summary)
    if summary.get("valid") is False:
        return 4
    return 0


def _cmd_pathological(args) -> int:
    G = pathological.build_pathological(args.k)
    rows, summary = [], {
        "k": args.k, "b": G.b,
        "levels": [float(v) for v in G.R],
        "endpoints": [float(v) for v in G.t],
        "rates": [float(v) for v in G.r],
        "log_levels": [float(v) for v in G.log_R],
        "n_seq": [int(v) for v in G.n_seq],
        "x_seq": [float(v) for v in G.x_seq],
    }
    if args.verify == "jk":
        for k in range(2, args.k + 1):
            rep = pathological.verify_Jk(G, k)
            rows.append({"k": k, "log_value": rep.log_value,
                         "log_bound": rep.log_bound,
                         "containment": int(rep.containment_ok),
                         "passes": int(rep.passes)})
    elif args.verify == "superlinearity":
        for k in range(3, min(args.k, 4) + 1):
            rep = pathological.superlinearity_report(G, k)
            rows.append({"k": k, "n": rep.n, "x": rep.x, "ratio": rep.ratio,
                         "ratio_lower": rep.ratio_lower,
                         "predicted_floor": rep.predicted_floor})
    elif args.verify == "kluppelberg":
        diag = classify.kluppelberg_criterion(G.view, [float(G.t[j])
                                                       for j in range(2, args.k + 1)])
        for p in diag.points:
            rows.append({"x": p.x, "value": p.ratio})
        summary["verdict"] = str(diag.verdict)
    _emit(args, f"pathological_k{args.k}_{args.verify or 'sequences'}", rows, summary)
    return 0


def _cmd_branching(args) -> int:
    from .stopped import gw_generation_tail, power_offspring
    off = power_offspring(args.alpha, args.mean)
    rows = []
    for x in args.x:
        x = float(x)
        exact = gw_generation_tail(off, args.generations, x)
        rows.append({"x": x, "exact": exact,
                     "two_term": off.mean() * float(off.tail(x))
                     + float(off.tail(x / off.mean()))})
    summary = {"generations": args.generations, "offspring_mean": off.mean()}
    _emit(args, f"branching_gen{args.generations}", rows, summary)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override scenario seed")
    common.add_argument("--out-dir", default=None,
                        help="write bundles here instead of stdout")
    common.add_argument("--threads", type=int, default=None,
                        help="advisory BLAS thread cap (results do not depend on it)")
    common.add_argument("--tolerance", type=float, default=None,
                        help="override verdict tolerance")
    ap = argparse.ArgumentParser(prog="stopsum", parents=[common],
                                 description="tails of randomly stopped heavy-tailed sums")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="catalog of bundled scenarios", parents=[common])

    p = sub.add_parser("run", help="run a scenario (bundled name or file path)",
                       parents=[common])
    p.add_argument("scenario")
    p.add_argument("--samples", type=int, default=None)

    p = sub.add_parser("classify", help="tail-class diagnostics for a distribution",
                       parents=[common])
    p.add_argument("--dist", required=True)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--x-start", type=float, default=None)
    p.add_argument("--x-stop", type=float, default=1e4)
    p.add_argument("--x-count", type=int, default=12)

    p = sub.add_parser("convtail", parents=[common], help="exact convolution-power tail on a lattice")
    p.add_argument("--dist", required=True)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--x-max", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x", nargs="*", default=None)
    p.add_argument("--cache-dir", default=None)

    p = sub.add_parser("stopped", parents=[common], help="exact stopped-sum tails for a scenario")
    p.add_argument("scenario")
    p.add_argument("--samples", type=int, default=None)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo for a scenario")
    p.add_argument("scenario")
    p.add_argument("--samples", type=int, default=None)

    p = sub.add_parser("pathological", parents=[common], help="counterexample construction reports")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--verify", choices=["jk", "superlinearity", "kluppelberg"],
                   default=None)

    p = sub.add_parser("branching", parents=[common], help="exact branching-generation tails")
    p.add_argument("--alpha", type=float, default=2.5)
    p.add_argument("--mean", type=float, default=1.0)
    p.add_argument("--generations", type=int, default=2)
    p.add_argument("--x", nargs="+", required=True)

    return ap


_HANDLERS = {
    "list": _cmd_list,
    "run": _cmd_run,
    "classify": _cmd_classify,
    "convtail": _cmd_convtail,
    "stopped": _cmd_stopped,
    "simulate": _cmd_simulate,
    "pathological": _cmd_pathological,
    "branching": _cmd_branching,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        return _HANDLERS[args.command](args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (ResourceBudgetError, DivergenceError) as exc:
        print(f"resource budget exceeded: {exc}", file=sys.stderr)
        return 3
    except (InvalidEstimateError, InapplicableError) as exc:
        print(f"invalid estimate or inapplicable method: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
