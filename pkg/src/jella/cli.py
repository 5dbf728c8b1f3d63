"""Command-line experiment harness: synth, mask, fit, eval, sweep.

Configuration is one JSON document (``--config``); command-line flags override
its fields. Exit codes: 0 success, 1 solver failure, 2 I/O or config error.

Per-run artifacts live under::

    <out>/<experiment>/<solver>/[alpha=..,gamma=../]m=<ratio>/rep=<i>/

holding W.csv, B.csv and F.csv (iml-bdr only), Z<v>.csv, trace.csv,
timing.json, config.json and report.json. Wall-clock numbers are kept out of
the CSV files so identical config and seed give byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np
from filelock import FileLock

from .clusteval import EvalReport, derive_seeds, evaluate_embedding, rmse
from .framework import complete_z, stop_rule_relative
from .mvdata import (
    MultiViewDataset,
    apply_incomplete_mask,
    apply_missing_view_mask,
    format_number,
    load_dataset,
    save_dataset,
    synth_union_of_subspaces,
    write_matrix,
)
from .solvers import BdrConfig, bdr_fit, mvliv_fit, pvc_fit, pvc_fit_incomplete

logger = logging.getLogger("jella")

SOLVERS = ("iml-bdr", "pvc", "mvl-iv")
MASK_MODES = ("missing-view", "incomplete")
EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "experiment": "default",
    "seed": 0,
    "solver": "iml-bdr",
    "data": None,
    "truth": None,
    "synthetic": {
        "k": 3,
        "subspace_dim": 4,
        "ambient_dims": [30, 30],
        "n_per_cluster": 40,
        "noise_sigma": 0.0,
        "center_scale": 4.0,
    },
    "mask_mode": "missing-view",
    "m": 0.0,
    "repeats": 1,
    "alpha": 1.0,
    "beta": 1e4,
    "gamma": 10.0,
    "k": None,
    "r": None,
    "tol": 1e-4,
    "max_iter": 500,
    "sor": True,
    "rho1": 0.7,
    "delta": 0.2,
    "lam_max": 5.0,
    "eval_repeats": 20,
    "kmeans_restarts": 10,
    "nmi_normalization": "sqrt",
    "grid": {"alpha": [1e-2, 1.0, 1e2], "gamma": [1.0, 10.0, 1e2], "m": [0.1, 0.3, 0.5]},
    "workers": 1,
    "out": "out",
}

SUMMARY_FIELDS = [
    "cell", "experiment", "solver", "alpha", "beta", "gamma", "m", "rep", "seed",
    "iterations", "stop_reason", "final_objective",
    "nmi_mean", "nmi_std", "adjri_mean", "adjri_std", "rmse",
]


class ConfigError(ValueError):
    """Bad configuration or unreadable input (exit code 2)."""


class SolverFailure(RuntimeError):
    """The solver raised while fitting (exit code 1)."""


# ------------------------------------------------------------------ config


def _merge(base, override):
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(cfg, user)

    flags = {
        "seed": args.seed, "solver": args.solver, "out": args.out,
        "repeats": args.repeats, "max_iter": args.max_iter, "tol": args.tol,
        "beta": args.beta, "experiment": args.experiment, "data": args.data,
        "truth": args.truth, "mask_mode": args.mode, "k": args.k, "r": args.r,
        "workers": args.workers,
    }
    for key, val in flags.items():
        if val is not None:
            cfg[key] = val
    if args.no_sor:
        cfg["sor"] = False
    grid = dict(cfg["grid"])
    for key in ("alpha", "gamma", "m"):
        val = getattr(args, key)
        if val is None:
            continue
        if args.command == "sweep":
            grid[key] = list(val)
        else:
            cfg[key] = val
    cfg["grid"] = grid
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg["solver"] not in SOLVERS:
        raise ConfigError(f"solver must be one of {SOLVERS}, got {cfg['solver']!r}")
    if cfg["mask_mode"] not in MASK_MODES:
        raise ConfigError(f"mask mode must be one of {MASK_MODES}")
    ms = [cfg["m"]] + list(cfg["grid"].get("m", []))
    if any(not 0.0 <= float(m) <= 1.0 for m in ms):
        raise ConfigError("m must lie in [0, 1]")
    if int(cfg["repeats"]) < 1:
        raise ConfigError("repeats must be >= 1")
    if int(cfg["eval_repeats"]) < 1:
        raise ConfigError("eval_repeats must be >= 1")
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers must be >= 1")
    if float(cfg["tol"]) <= 0 or int(cfg["max_iter"]) < 1:
        raise ConfigError("need tol > 0 and max_iter >= 1")
    for key in ("alpha", "gamma"):
        if not cfg["grid"].get(key):
            raise ConfigError(f"grid.{key} must be a non-empty list")


# ------------------------------------------------------------------ data I/O


def _view_index(path):
    match = re.search(r"(\d+)\.csv$", path.name)
    return int(match.group(1)) if match else -1


def load_dir(directory) -> MultiViewDataset:
    """Load ``view1.csv, view2.csv, ...`` (+ optional ``labels.csv``) from a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"dataset directory not found: {directory}")
    views = sorted(directory.glob("view*.csv"), key=_view_index)
    if not views:
        raise ConfigError(f"no view*.csv files in {directory}")
    labels = directory / "labels.csv"
    try:
        return load_dataset(views, labels if labels.exists() else None)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load dataset from {directory}: {exc}") from exc


def source_dataset(cfg) -> MultiViewDataset:
    if cfg["data"]:
        return load_dir(cfg["data"])
    spec = cfg["synthetic"]
    try:
        return synth_union_of_subspaces(
            int(spec["k"]), int(spec["subspace_dim"]), list(spec["ambient_dims"]),
            int(spec["n_per_cluster"]), float(spec.get("noise_sigma", 0.0)),
            seed=cfg["seed"], center_scale=float(spec.get("center_scale", 4.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}") from exc


def mask_dataset(ds, mode, m, seed):
    try:
        if mode == "missing-view":
            return apply_missing_view_mask(ds, m, seed)
        return apply_incomplete_mask(ds, m, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_json(path, obj):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# ------------------------------------------------------------------ fit / eval


def _n_clusters(cfg, ds):
    if cfg["k"] is not None:
        return int(cfg["k"])
    if ds.labels is not None:
        return int(ds.labels.max())
    raise ConfigError("k is required when the dataset has no labels")


def _is_missing_view(ds):
    # every mask column fully observed or fully absent
    return all(np.all(mk.all(0) | ~mk.any(0)) for mk in ds.masks)


def run_solver(cfg, ds):
    """Fit the configured solver. Returns ``(W, Zs, extras, trace)``."""
    k = _n_clusters(cfg, ds)
    r = int(cfg["r"]) if cfg["r"] is not None else k
    stop = stop_rule_relative(float(cfg["tol"]), int(cfg["max_iter"]))
    extras = {}
    try:
        if cfg["solver"] == "iml-bdr":
            bcfg = BdrConfig(
                alpha=float(cfg["alpha"]), beta=float(cfg["beta"]), gamma=float(cfg["gamma"]),
                k=k, r=r, rho1=float(cfg["rho1"]), delta=float(cfg["delta"]),
                lam_max=float(cfg["lam_max"]), tol=float(cfg["tol"]),
                max_iter=int(cfg["max_iter"]), seed=int(cfg["seed"]), sor=bool(cfg["sor"]),
            )
            state, trace = bdr_fit(ds, bcfg)
            extras = {"B": state.B, "F": state.F}
            return state.W, list(state.Z), extras, trace
        if cfg["solver"] == "mvl-iv":
            state, trace = mvliv_fit(ds, r, stop, seed=int(cfg["seed"]))
            return state.W, list(state.Z), extras, trace
        if _is_missing_view(ds):
            state, trace = pvc_fit(ds, alpha=float(cfg["alpha"]), r=r, stop_rule=stop,
                                   seed=int(cfg["seed"]))
            Zs = [complete_z(view, U, state.W) for view, U in zip(ds.views, state.U)]
        else:
            state, trace = pvc_fit_incomplete(ds, alpha=float(cfg["alpha"]), r=r,
                                              stop_rule=stop, seed=int(cfg["seed"]))
            Zs = list(state.Z)
        return state.W, Zs, extras, trace
    except ConfigError:
        raise
    except Exception as exc:
        raise SolverFailure(f"{cfg['solver']} failed: {exc}") from exc


def write_fit(directory, cfg, W, Zs, extras, trace):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix(directory / "W.csv", W)
    for name, M in extras.items():
        write_matrix(directory / f"{name}.csv", M)
    for v, Z in enumerate(Zs, start=1):
        write_matrix(directory / f"Z{v}.csv", Z)
    with open(directory / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "objective", "lam", "accepted"])
        for rec in trace.records:
            writer.writerow([rec.iteration, format_number(rec.objective),
                             format_number(rec.lam), int(rec.accepted)])
    _write_json(directory / "timing.json", {
        "total_seconds": trace.total_seconds,
        "per_iteration_seconds": [rec.seconds for rec in trace.records],
        "iterations": trace.n_iterations,
        "sweeps": trace.n_sweeps,
    })
    summary = {
        "iterations": trace.n_iterations,
        "stop_reason": trace.stop_reason,
        "final_objective": trace.objectives[-1] if trace.objectives else trace.initial_objective,
    }
    _write_json(directory / "config.json", {"config": cfg, "fit": summary})
    return summary


def evaluate(cfg, W, Zs, labels=None, truth: MultiViewDataset = None) -> EvalReport:
    report = EvalReport()
    if labels is not None:
        report = evaluate_embedding(
            W, labels, int(labels.max()), repeats=int(cfg["eval_repeats"]),
            seed=int(cfg["seed"]), restarts=int(cfg["kmeans_restarts"]),
            normalization=cfg["nmi_normalization"],
        )
    if truth is not None:
        full = np.vstack([view.data for view in truth.views])
        if np.isnan(full).any():
            raise ConfigError("ground-truth dataset has missing entries")
        report.rmse = rmse(np.vstack(Zs), full)
    return report


def append_summary(path, row):
    """Append one row under a file lock; rows already present (by cell id) are skipped."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(path) + ".lock"):
        exists = path.exists() and path.stat().st_size > 0
        if exists:
            with open(path, newline="") as fh:
                if any(rec.get("cell") == row["cell"] for rec in csv.DictReader(fh)):
                    return False
        with open(path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, SUMMARY_FIELDS, lineterminator="\n")
            if not exists:
                writer.writeheader()
            writer.writerow({key: _csv_value(row.get(key)) for key in SUMMARY_FIELDS})
    return True


def _csv_value(val):
    if val is None:
        return ""
    if isinstance(val, (float, np.floating)):
        return format_number(float(val))
    return val


def summary_row(cell, cfg, m, rep, fit_summary, report: EvalReport):
    row = {
        "cell": cell, "experiment": cfg["experiment"], "solver": cfg["solver"],
        "alpha": float(cfg["alpha"]), "beta": float(cfg["beta"]), "gamma": float(cfg["gamma"]),
        "m": float(m), "rep": int(rep), "seed": int(cfg["seed"]),
    }
    row.update(fit_summary)
    metrics = report.to_dict()
    for key in ("nmi_mean", "nmi_std", "adjri_mean", "adjri_std", "rmse"):
        row[key] = metrics.get(key)
    return row


def _report_json(cfg, fit_summary, report, wall):
    report.iterations = fit_summary.get("iterations")
    report.wall_time_seconds = wall
    return {"config": cfg, "seed": cfg["seed"], "fit": fit_summary, "metrics": report.to_dict()}


def cell_dir(cfg, m, rep, with_grid=False):
    base = Path(cfg["out"]) / cfg["experiment"] / cfg["solver"]
    if with_grid:
        base = base / f"alpha={format_number(float(cfg['alpha']))},gamma={format_number(float(cfg['gamma']))}"
    return base / f"m={format_number(float(m))}" / f"rep={rep}"


def run_cell(cfg, m, rep, with_grid=False):
    """Mask, fit, write artifacts and evaluate one (config, m, rep) cell."""
    directory = cell_dir(cfg, m, rep, with_grid)
    cell = str(directory.relative_to(Path(cfg["out"])))
    start = time.perf_counter()
    full = source_dataset(cfg)
    mask_seed = derive_seeds(cfg["seed"], int(cfg["repeats"]))[rep]
    ds = mask_dataset(full, cfg["mask_mode"], float(m), mask_seed)
    W, Zs, extras, trace = run_solver(cfg, ds)
    fit_summary = write_fit(directory, cfg, W, Zs, extras, trace)
    report = evaluate(cfg, W, Zs, full.labels, full)
    row = summary_row(cell, cfg, m, rep, fit_summary, report)
    append_summary(Path(cfg["out"]) / cfg["experiment"] / "summary.csv", row)
    # written last: its presence marks the cell complete
    _write_json(directory / "report.json",
                _report_json(cfg, fit_summary, report, time.perf_counter() - start))
    return row


# ------------------------------------------------------------------ commands


def cmd_synth(cfg):
    if cfg["data"]:
        raise ConfigError("synth generates data; do not pass --data")
    ds = source_dataset(cfg)
    out = Path(cfg["out"])
    paths, label_path = save_dataset(ds, out)
    files = [p.name for p in paths] + ([label_path.name] if label_path else [])
    manifest = {"seed": cfg["seed"], "synthetic": cfg["synthetic"], "n": ds.n, "files": files}
    _write_json(out / "manifest.json", manifest)
    print(json.dumps(manifest, sort_keys=True))
    return EXIT_OK


def cmd_mask(cfg):
    ds = source_dataset(cfg)
    out = Path(cfg["out"])
    seeds = derive_seeds(cfg["seed"], int(cfg["repeats"]))
    for rep, seed in enumerate(seeds):
        masked = mask_dataset(ds, cfg["mask_mode"], float(cfg["m"]), seed)
        save_dataset(masked, out / f"rep={rep}")
        _write_json(out / f"rep={rep}" / "manifest.json",
                    {"seed": cfg["seed"], "mask_seed": seed, "m": cfg["m"],
                     "mode": cfg["mask_mode"], "rep": rep})
    print(f"wrote {len(seeds)} masked copies under {out}")
    return EXIT_OK


def cmd_fit(cfg):
    if not cfg["data"]:
        raise ConfigError("fit needs --data (a directory of view*.csv files)")
    ds = load_dir(cfg["data"])
    W, Zs, extras, trace = run_solver(cfg, ds)
    summary = write_fit(cfg["out"], cfg, W, Zs, extras, trace)
    print(f"{cfg['solver']}: {summary['stop_reason']} after {summary['iterations']} "
          f"iterations, objective {summary['final_objective']:.6g}")
    return EXIT_OK


def _read_csv_matrix(path):
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def cmd_eval(cfg, fit_dir):
    fit_dir = Path(fit_dir or cfg["out"])
    if not (fit_dir / "W.csv").exists():
        raise ConfigError(f"no W.csv in {fit_dir}")
    W = _read_csv_matrix(fit_dir / "W.csv")
    Zs = [_read_csv_matrix(p) for p in sorted(fit_dir.glob("Z*.csv"), key=_view_index)]
    fit_info = {}
    if (fit_dir / "config.json").exists():
        with open(fit_dir / "config.json") as fh:
            fit_info = json.load(fh)
    labels = load_dir(cfg["data"]).labels if cfg["data"] else None
    truth = load_dir(cfg["truth"]) if cfg["truth"] else None
    if truth is not None and not Zs:
        raise ConfigError(f"ground truth given but no Z*.csv in {fit_dir}")
    start = time.perf_counter()
    report = evaluate(cfg, W, Zs, labels, truth)
    fit_summary = fit_info.get("fit", {})
    fit_cfg = fit_info.get("config", cfg)
    payload = _report_json(cfg, fit_summary, report, time.perf_counter() - start)
    _write_json(fit_dir / "report.json", payload)
    m, rep = _cell_coords(fit_dir, fit_cfg)
    row = summary_row(str(fit_dir), _merge(cfg, {k: fit_cfg[k] for k in
                                                 ("solver", "alpha", "beta", "gamma", "seed")
                                                 if k in fit_cfg}),
                      m, rep, fit_summary, report)
    append_summary(Path(cfg["out"]) / "summary.csv", row)
    print(json.dumps(payload["metrics"], sort_keys=True))
    return EXIT_OK


def _cell_coords(fit_dir, cfg):
    m, rep = cfg.get("m", 0.0), 0
    for part in Path(fit_dir).parts:
        if part.startswith("m="):
            m = float(part[2:])
        elif part.startswith("rep="):
            rep = int(part[4:])
    return m, rep


def _sweep_cell(cfg, m, rep):
    try:
        return run_cell(cfg, m, rep, with_grid=True), None
    except Exception as exc:  # one bad cell must not stop the sweep
        return None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(cfg):
    grid = cfg["grid"]
    ms = grid.get("m") or [cfg["m"]]
    cells = []
    for alpha, gamma, m, rep in itertools.product(grid["alpha"], grid["gamma"], ms,
                                                  range(int(cfg["repeats"]))):
        cell_cfg = dict(cfg, alpha=float(alpha), gamma=float(gamma), m=float(m))
        if (cell_dir(cell_cfg, m, rep, with_grid=True) / "report.json").exists():
            continue
        cells.append((cell_cfg, float(m), rep))
    total = len(grid["alpha"]) * len(grid["gamma"]) * len(ms) * int(cfg["repeats"])
    logger.info("sweep: %d of %d cells to run", len(cells), total)

    failures = []
    workers = min(int(cfg["workers"]), max(1, len(cells)))
    if workers == 1:
        results = [(_sweep_cell(*c), c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_sweep_cell, *c): c for c in cells}
            results = [(f.result(), futures[f]) for f in as_completed(futures)]
    for (row, err), (cell_cfg, m, rep) in results:
        if err is not None:
            desc = f"alpha={cell_cfg['alpha']} gamma={cell_cfg['gamma']} m={m} rep={rep}: {err}"
            logger.error("cell failed: %s", desc)
            failures.append(desc)
    if failures:
        log = Path(cfg["out"]) / cfg["experiment"] / "failures.log"
        log.parent.mkdir(parents=True, exist_ok=True)
        with open(log, "a") as fh:
            fh.write("\n".join(failures) + "\n")
    print(f"sweep: ran {len(cells)} cells ({len(cells) - len(failures)} ok, "
          f"{len(failures)} failed), skipped {total - len(cells)} completed")
    return EXIT_SOLVER if failures else EXIT_OK


# ------------------------------------------------------------------ entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--solver", choices=SOLVERS)
    common.add_argument("--beta", type=float)
    common.add_argument("--out", help="output directory")
    common.add_argument("--repeats", type=int, help="number of mask re-draws")
    common.add_argument("--max-iter", type=int, dest="max_iter")
    common.add_argument("--tol", type=float)
    common.add_argument("--no-sor", action="store_true", help="force lam = 1 (plain passes)")
    common.add_argument("--data", help="dataset directory with view*.csv [+ labels.csv]")
    common.add_argument("--truth", help="unmasked dataset directory, for RMSE")
    common.add_argument("--experiment")
    common.add_argument("--mode", choices=MASK_MODES, help="masking mode")
    common.add_argument("-k", type=int, help="number of clusters")
    common.add_argument("--r", type=int, help="embedding rank (defaults to k)")
    common.add_argument("--workers", type=int, help="sweep worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    single = argparse.ArgumentParser(add_help=False)
    single.add_argument("--m", type=float, help="missing ratio")
    single.add_argument("--alpha", type=float)
    single.add_argument("--gamma", type=float)

    parser = argparse.ArgumentParser(prog="jella", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common, single], help="generate a synthetic dataset")
    sub.add_parser("mask", parents=[common, single], help="write masked copies of a dataset")
    sub.add_parser("fit", parents=[common, single], help="fit one solver on one dataset")
    ev = sub.add_parser("eval", parents=[common, single], help="evaluate a fitted model")
    ev.add_argument("--fit-dir", dest="fit_dir", help="directory holding W.csv (default: --out)")
    sw = sub.add_parser("sweep", parents=[common], help="alpha x gamma x m x rep grid")
    sw.add_argument("--m", type=float, nargs="+")
    sw.add_argument("--alpha", type=float, nargs="+")
    sw.add_argument("--gamma", type=float, nargs="+")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "mask":
            return cmd_mask(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, getattr(args, "fit_dir", None))
        return cmd_sweep(cfg)
    except SolverFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
