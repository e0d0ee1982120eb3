"""Command-line entry point: ``pfeddl {synth,train,align,sweep}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import dataio
from .alignment import SignedPermutation, global_alignment
from .config import RunConfig, build_config, load_config_file, sweep_hyper
from .dl_core import pretrain_local
from .errors import PFedDLError
from .evaluation import ExperimentConfig, run_experiment
from .federation import _site_generators
from .report import accuracy_table, write_alignment, write_experiment

logger = logging.getLogger("pfeddl")


def _setup_logging():
    level = os.environ.get("PFEDDL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load_sites(cfg: RunConfig):
    """Return ``(sites, names, truth)`` for the configured data source."""
    if cfg.synthetic is not None:
        sites, truth = dataio.generate_synthetic_federation(cfg.synthetic)
        return sites, [f"site_{i}" for i in range(len(sites))], truth
    sites = [dataio.load_site_dir(p) for p in cfg.sites]
    names = [Path(p).name for p in cfg.sites]
    if len(set(names)) != len(names):
        names = [f"site_{i}" for i in range(len(sites))]
    dims = [X.shape[0] for X, _ in sites]
    for name, path, d in zip(names, cfg.sites, dims):
        if d != dims[0]:
            raise PFedDLError(f"inconsistent feature dimension: {cfg.sites[0]} has d={dims[0]} but {path} has d={d}")
    return sites, names, None


def _experiment_config(cfg: RunConfig, hyper=None) -> ExperimentConfig:
    return ExperimentConfig(
        hyper=hyper or cfg.hyper,
        folds=cfg.folds,
        threads=cfg.threads,
        roi_count=cfg.roi_count,
        roi_signed=cfg.roi_signed,
        top_atoms=cfg.top_atoms,
        top_rois=cfg.top_rois,
    )


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.synthetic is None:
        print("error: synth needs a synthetic spec (use --profile quickstart or a config with data.synthetic)", file=sys.stderr)
        return 2
    out = cfg.out
    if out.exists() and any(out.iterdir()):
        print(f"error: output directory {out} exists and is not empty", file=sys.stderr)
        return 1
    sites, truth = dataio.generate_synthetic_federation(cfg.synthetic)
    tmp = None
    try:
        # build everything in a sibling temp dir, then move it into place
        tmp = tempfile.mkdtemp(prefix=".synth-", dir=out.parent if str(out.parent) else ".")
        written = dataio.write_federation(tmp, sites, truth)
        (Path(tmp) / "spec.json").write_text(json.dumps(cfg.synthetic.to_dict(), indent=1, sort_keys=True) + "\n")
        written.append("spec.json")
        if out.exists():
            out.rmdir()
        dataio.atomic_replace_dir(tmp, out)
        tmp = None
    except OSError as exc:
        print(f"error: could not write {out}: {exc}", file=sys.stderr)
        return 1
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)
    print(f"wrote {len(sites)} sites to {out}")
    for name in written:
        print(f"  {out / name}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    try:
        sites, names, _ = _load_sites(cfg)
    except (OSError, PFedDLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg.out.mkdir(parents=True, exist_ok=True)
    try:
        report = run_experiment(sites, _experiment_config(cfg), names)
    except PFedDLError as exc:
        (cfg.out / "report.txt").write_text(f"status failed\nerror: {exc}\n")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_experiment(report, cfg.out, cfg.hyper_dict(), figures=cfg.figures)
    print(accuracy_table(report), end="")
    print(f"report written to {cfg.out / 'report.txt'}")
    return 0


def _planted_demo(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.hyper.seed)
    d, k, n_sites = 32, 8, 4
    D_ref = rng.standard_normal((d, k))
    D_ref /= np.linalg.norm(D_ref, axis=0)
    planted = [SignedPermutation.random(k, rng) for _ in range(n_sites)]
    dicts = [P.apply_columns(D_ref) for P in planted]
    codes = [np.zeros((k, 1)) for _ in range(n_sites)]
    aligned, _, perms, record = global_alignment(dicts, codes)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_alignment(record, cfg.out / "alignment.json", perms)
    for i, (P0, P) in enumerate(zip(planted, perms)):
        print(f"site {i}: planted perm {P0.perm.tolist()} signs {P0.signs.tolist()}")
        print(f"        recovered perm {P.perm.tolist()} signs {P.signs.tolist()}")
    print("path weights " + " ".join(f"{r['weight']:.3g}" for r in record.rounds))
    spread = max(float(np.max(np.abs(A - aligned[0]))) for A in aligned)
    print(f"total path weight {record.total_weight:.3g}; max deviation between aligned dictionaries {spread:.3g}")
    return 0


def cmd_align(cfg: RunConfig, planted_demo: bool = False) -> int:
    if planted_demo:
        return _planted_demo(cfg)
    try:
        sites, names, _ = _load_sites(cfg)
        hyper = cfg.hyper
        rngs = _site_generators(hyper.seed, len(sites))
        pre = [pretrain_local(X, hyper, rng) for (X, _), rng in zip(sites, rngs)]
        aligned, _, perms, record = global_alignment([D for D, _ in pre], [S for _, S in pre])
    except (OSError, PFedDLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_alignment(record, cfg.out / "alignment.json", perms)
    adir = cfg.out / "aligned"
    adir.mkdir(exist_ok=True)
    for name, D in zip(names, aligned):
        dataio.save_matrix(adir / f"{name}_D.txt", D)
    for r, rnd in enumerate(record.rounds):
        pairs = " ".join(f"{s:+d}*{a}" for a, s in zip(rnd["atoms"], rnd["signs"]))
        print(f"position {r}: {pairs}  weight {rnd['weight']:.4g}")
    print(f"total path weight {record.total_weight:.4g}; alignment written to {cfg.out / 'alignment.json'}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.sweep_param or not cfg.sweep_values:
        print("error: sweep needs --param and a nonempty --values list", file=sys.stderr)
        return 2
    try:
        sites, names, _ = _load_sites(cfg)
    except (OSError, PFedDLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg.out.mkdir(parents=True, exist_ok=True)
    failures = 0
    rows = []
    with open(cfg.out / "sweep.csv", "w", newline="", buffering=1) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([cfg.sweep_param, "mean_accuracy", "std_accuracy", "status"])
        for value in cfg.sweep_values:
            try:
                hyper = sweep_hyper(cfg.hyper, cfg.sweep_param, value)
                report = run_experiment(sites, _experiment_config(cfg, hyper), names)
                write_experiment(report, cfg.out / f"{cfg.sweep_param}_{value}", figures=False)
                row = {"value": value, "mean_accuracy": report.mean_accuracy, "std_accuracy": report.std_accuracy}
                writer.writerow([value, repr(report.mean_accuracy), repr(report.std_accuracy), "ok"])
            except PFedDLError as exc:
                failures += 1
                row = {"value": value, "mean_accuracy": None, "std_accuracy": None}
                writer.writerow([value, "", "", f"failed: {exc}"])
                print(f"error: {cfg.sweep_param}={value}: {exc}", file=sys.stderr)
            rows.append(row)
            fh.flush()
            print(f"{cfg.sweep_param}={value}: {row['mean_accuracy']}")
    if cfg.figures:
        from .plotting import plot_sweep

        plot_sweep(rows, cfg.sweep_param, cfg.out / "sweep.png")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--profile", choices=["default", "quickstart"], help="base settings (default: default, or the config's profile)")
    common.add_argument("--seed", type=int, help="seed for training, splits and synthetic data")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=int, help="worker threads; 1 gives the bitwise-deterministic path")
    common.add_argument("--sites", nargs="+", help="site directories holding X.txt/Y.txt or timeseries_*.txt")
    common.add_argument("--folds", type=int, help="cross-validation folds")
    common.add_argument("--no-figures", dest="figures", action="store_const", const=False, help="skip PNG figures")

    parser = argparse.ArgumentParser(prog="pfeddl", description="Personalized federated dictionary learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a planted synthetic federation")
    sub.add_parser("train", parents=[common], help="cross-validated training and evaluation")
    p_align = sub.add_parser("align", parents=[common], help="pretrain and align site dictionaries")
    p_align.add_argument("--planted-demo", action="store_true", help="align planted signed permutations of one dictionary")
    p_sweep = sub.add_parser("sweep", parents=[common], help="repeat train over a hyperparameter range")
    p_sweep.add_argument("--param", dest="sweep_param", help="hyperparameter to sweep, e.g. k")
    p_sweep.add_argument("--values", dest="sweep_values", nargs="+", help="values to try")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        file_data = load_config_file(args.config) if args.config else None
        cfg = build_config(
            file_data,
            profile=args.profile,
            seed=args.seed,
            out=args.out,
            threads=args.threads,
            folds=args.folds,
            sites=args.sites,
            figures=args.figures,
            sweep_param=getattr(args, "sweep_param", None),
            sweep_values=getattr(args, "sweep_values", None),
        )
        planted = getattr(args, "planted_demo", False)
        cfg.validate(need_data=not planted)
    except (OSError, PFedDLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "synth":
        return cmd_synth(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "align":
        return cmd_align(cfg, planted)
    return cmd_sweep(cfg)


if __name__ == "__main__":
    sys.exit(main())
