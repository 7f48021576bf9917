"""Command-line front end: ``hm run``, ``hm testbed`` and ``hm report``.

Exit status is 0 on full success, 1 when some replication failed and 2 on
invalid input (bad config, unsupported dimension, malformed CSV).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from importlib import metadata

import numpy as np
import scipy

from . import __version__
from .config import canonical_json, load_config, parse_config
from .errors import ConfigError, HistMatchError, ParseError
from .orchestrator import (
    METRIC_FIELDS,
    PROBLEM,
    WaveState,
    count_clusters,
    derive_seed,
    run_replications,
    run_sampler_only,
    summarize,
)
from .testbed import FRANKE_TARGET, TORUS_BOX, RandomFunctionSpec, franke, make_random_function
from .testbed import torus_implausibility

log = logging.getLogger("histmatch")

CHECKPOINT_VERSION = 1
FRANKE_BUDGET = 1e-5
RANDOM_BUDGET = 0.25


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[h]) for h in header])


def _write_json(path, doc):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _error(msg) -> int:
    print(f"hm: error: {msg}", file=sys.stderr)
    return 2


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = __version__
    return {"histmatch": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _default_jobs():
    try:
        return max(1, int(os.environ.get("HM_JOBS", "1")))
    except ValueError:
        return 1


# -- run ---------------------------------------------------------------------

def _load_run_config(path, seed):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    if isinstance(doc, dict) and "config" in doc and "config_hash" in doc:
        doc = doc["config"]  # a run manifest
    if seed is not None and isinstance(doc, dict):
        doc = dict(doc, seed=seed)
    return parse_config(doc)


def _checkpoint_doc(config, wave, states):
    return {
        "version": CHECKPOINT_VERSION,
        "config": config.raw,
        "config_hash": config.config_hash(),
        "wave": wave,
        "states": [states[k].to_dict() for k in sorted(states)],
    }


def _load_checkpoint(path, config):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError("checkpoint.version", f"unsupported (want {CHECKPOINT_VERSION})")
    if doc.get("config_hash") != config.config_hash():
        raise ConfigError("checkpoint.config_hash", "checkpoint was written for a different config")
    states = [WaveState.from_dict(d) for d in doc["states"]]
    return {(s.replication, s.criterion): s for s in states}


def _run_sampler(config, out):
    rows = []
    for r, levels in enumerate(run_sampler_only(config)):
        levels.to_csv(os.path.join(out, f"levels_r{r}.csv"))
        rows.append({"replication": r, "levels": len(levels) - 1,
                     "final_beta": float(levels.betas[-1]),
                     "clusters": count_clusters(levels.final, 0.5)})
    _write_csv(os.path.join(out, "sampler.csv"), ["replication", "levels", "final_beta", "clusters"],
               rows)
    return []


def cmd_run(args) -> int:
    try:
        config = _load_run_config(args.config, args.seed)
    except OSError as exc:
        return _error(f"cannot read config: {exc}")
    except ConfigError as exc:
        return _error(str(exc))
    out = args.out
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    manifest = {
        "config": config.raw,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "versions": _versions(),
        "resumed_from": args.resume,
    }

    if config.sampler_only:
        failures = _run_sampler(config, out)
        manifest["failures"] = failures
        _write_json(os.path.join(out, "manifest.json"), manifest)
        return 0

    resume = None
    if args.resume:
        try:
            resume = _load_checkpoint(args.resume, config)
        except OSError as exc:
            return _error(f"cannot read checkpoint: {exc}")
        except (ConfigError, KeyError, ValueError) as exc:
            return _error(f"bad checkpoint: {exc}")

    def on_wave(wave, states):
        doc = _checkpoint_doc(config, wave, states)
        _write_json(os.path.join(out, "checkpoints", f"wave_{wave:03d}.json"), doc)
        _write_json(os.path.join(out, "checkpoint.json"), doc)

    base_dir = os.path.dirname(os.path.abspath(args.config))
    try:
        report = run_replications(config, jobs=args.jobs, base_dir=base_dir, resume=resume,
                                  on_wave=on_wave)
    except HistMatchError as exc:
        return _error(str(exc))

    path = os.path.join(out, "metrics.csv")
    if resume is not None and os.path.exists(path):
        with open(path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in report.rows:
                writer.writerow([_fmt(row[h]) for h in METRIC_FIELDS])
    else:
        rows = report.rows
        if resume is not None:
            rows = sorted((r for s in resume.values() for r in s.history), key=_row_key) + rows
        _write_csv(path, METRIC_FIELDS, rows)

    manifest["failures"] = report.failures
    manifest["status"] = {f"{r}:{c}": s.status for (r, c), s in sorted(report.states.items())}
    _write_json(os.path.join(out, "manifest.json"), manifest)
    for f in report.failures:
        print(f"hm: replication {f['replication']} ({f['criterion']}) failed at wave "
              f"{f['wave']}: {f['error']}", file=sys.stderr)
    return 1 if report.failures else 0


def _row_key(r):
    return (r["replication"], r["wave"], r["criterion"], r["output"])


# -- testbed -----------------------------------------------------------------

def _franke_config(seed):
    return {
        "name": "franke",
        "simulator": {"problem": "franke"},
        "targets": [{"z": FRANKE_TARGET}],
        "budgets": [{"var_md": FRANKE_BUDGET, "var_me": FRANKE_BUDGET, "k": 3.0}],
        "initial_design_size": 20,
        "batch_size": 10,
        "n_waves": 3,
        "criteria": ["entropy", "eci", "risk", "lhs"],
        "replications": 10,
        "seed": seed,
    }


def cmd_testbed(args) -> int:
    out = args.out
    problem = args.problem
    if problem == "franke" and args.dim not in (None, 2):
        return _error(f"--dim: franke is 2-dimensional, got {args.dim}")
    if problem == "torus" and args.dim not in (None, 3):
        return _error(f"--dim: torus is 3-dimensional, got {args.dim}")
    if problem == "random" and args.dim is not None and args.dim < 1:
        return _error(f"--dim: must be >= 1, got {args.dim}")
    os.makedirs(out, exist_ok=True)

    if problem == "franke":
        g = np.linspace(0.0, 1.0, 51)
        X = np.array([[a, b] for a in g for b in g])
        y = franke(X)
        _write_csv(os.path.join(out, "franke_probe.csv"), ["x1", "x2", "y"],
                   [{"x1": a, "x2": b, "y": v} for (a, b), v in zip(X, y)])
        doc = _franke_config(args.seed)
    elif problem == "torus":
        g = [np.linspace(TORUS_BOX[0, j], TORUS_BOX[1, j], 31) for j in range(3)]
        X = np.stack(np.meshgrid(*g, indexing="ij"), axis=-1).reshape(-1, 3)
        imp = torus_implausibility(X)
        _write_csv(os.path.join(out, "torus_probe.csv"), ["x1", "x2", "x3", "implausibility"],
                   [{"x1": a, "x2": b, "x3": c, "implausibility": v} for (a, b, c), v in zip(X, imp)])
        # sampler-only: the implausibility is evaluated directly, no emulator
        doc = {
            "name": "torus",
            "simulator": {"problem": "torus"},
            "targets": [{"z": 0.0}],
            "budgets": [{"k": 3.0}],
            "replications": 20,
            "seed": args.seed,
        }
    else:
        d = 2 if args.dim is None else args.dim
        # every replication draws its own function and target; the seed file
        # holds replication 0's function for inspection
        doc = {
            "name": f"random-d{d}",
            "simulator": {"problem": "random", "dim": d},
            "targets": [{"z": "auto"}],
            "budgets": [{"var_md": RANDOM_BUDGET, "var_me": RANDOM_BUDGET, "k": 3.0}],
            "initial_design_size": 10 * d,
            "batch_size": 5 * d,
            "n_waves": 3,
            # the testbed tracks the error over a fixed number of waves
            "stop_on_error": False,
            "emulator": {"family": "matern-5/2"},
            "criteria": ["eci", "entropy", "risk"],
            "replications": 10,
            "seed": args.seed,
        }
        spec = RandomFunctionSpec(dim=d, seed=derive_seed(args.seed, 0, PROBLEM))
        make_random_function(spec)[0].dump_csv(os.path.join(out, "random_seeds.csv"))
    parse_config(doc)  # the emitted config must be runnable
    _write_json(os.path.join(out, "config.json"), doc)
    return 0


# -- report ------------------------------------------------------------------

def read_metrics(path):
    """Parse a metrics CSV; raises ParseError on any schema mismatch."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != METRIC_FIELDS:
            raise ParseError(f"{path}: header must be {','.join(METRIC_FIELDS)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(METRIC_FIELDS):
                raise ParseError(f"{path}:{lineno}: expected {len(METRIC_FIELDS)} fields")
            try:
                rows.append({
                    "replication": int(rec[0]),
                    "wave": int(rec[1]),
                    "criterion": rec[2],
                    "output": rec[3],
                    "max_error": float(rec[4]),
                    "median_crps": float(rec[5]),
                })
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return rows


def cmd_report(args) -> int:
    try:
        rows = read_metrics(args.metrics)
    except OSError as exc:
        return _error(f"cannot read metrics: {exc}")
    except ParseError as exc:
        return _error(str(exc))
    if not rows:
        return _error(f"{args.metrics}: no metric rows")
    os.makedirs(args.out, exist_ok=True)
    summary = summarize(rows)
    header = ["criterion", "output", "wave", "n"] + [
        f"{m}_{s}" for m in ("max_error", "median_crps") for s in ("min", "q1", "median", "q3", "max")
    ]
    _write_csv(os.path.join(args.out, "quartiles.csv"), header, summary)
    trend = ["criterion", "output", "wave", "max_error_median", "median_crps_median"]
    _write_csv(os.path.join(args.out, "trend.csv"), trend, summary)
    return 0


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hm", description="History matching with active learning.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the waves of an experiment config")
    run.add_argument("config", help="experiment JSON (or a run manifest)")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.add_argument("--resume", metavar="CHECKPOINT", default=None)
    run.add_argument("--out", default="hm_out")
    run.add_argument("--jobs", type=int, default=_default_jobs(),
                     help="parallel replications (default: $HM_JOBS or 1)")
    run.set_defaults(func=cmd_run)

    tb = sub.add_parser("testbed", help="write a test problem and a ready-to-run config")
    tb.add_argument("--problem", choices=("franke", "torus", "random"), required=True)
    tb.add_argument("--dim", type=int, default=None)
    tb.add_argument("--seed", type=int, default=0)
    tb.add_argument("--out", default="hm_testbed")
    tb.set_defaults(func=cmd_testbed)

    rep = sub.add_parser("report", help="summarize a metrics CSV into plot-ready tables")
    rep.add_argument("metrics")
    rep.add_argument("--out", default="hm_report")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
