"""Serialization of experiment results to text, CSV, JSON and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dataio import save_matrix
from .evaluation import FederationReport
from .federation import FederationResult


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def accuracy_table(report: FederationReport) -> str:
    """Per-site ``mean+-std`` over folds plus the average, one model row."""
    names = report.site_names
    header = ["Site / Model"] + names + ["Average"]
    cells = [f"{_fmt(m)}+-{_fmt(s)}" for m, s in zip(report.site_mean, report.site_std)]
    row = ["PFedDL"] + cells + [f"{_fmt(report.mean_accuracy)}+-{_fmt(report.std_accuracy)}"]
    widths = [max(len(a), len(b)) for a, b in zip(header, row)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return fmt.format(*header) + "\n" + fmt.format(*row) + "\n"


def render_report(report: FederationReport, hyper=None) -> str:
    lines = ["# PFedDL cross-validation report", ""]
    if hyper is not None:
        lines.append("hyperparameters: " + json.dumps(hyper, sort_keys=True))
        lines.append("")
    lines.append(accuracy_table(report).rstrip("\n"))
    lines += ["", f"mean_accuracy {report.mean_accuracy!r}", f"std_accuracy {report.std_accuracy!r}", ""]
    lines.append("fold " + " ".join(report.site_names) + " average")
    for f, avg in zip(report.folds, report.fold_average):
        lines.append(f"{f.fold} " + " ".join(repr(a) for a in f.accuracies) + f" {float(avg)!r}")
    lines.append("")
    if report.full is not None:
        lines.append(f"alignment_total_weight {report.full.record.total_weight!r}")
    if report.roi is not None:
        for name, roi in zip(report.site_names, report.roi):
            lines.append(f"{name} top_rois " + " ".join(str(int(i)) for i in roi.top_rois))
    for note in report.notes:
        lines.append(f"note: {note}")
    lines.append("status ok")
    return "\n".join(lines) + "\n"


def write_rounds(result: FederationResult, site_names, out: Path) -> None:
    with open(out / "rounds.jsonl", "w") as fh:
        for r in result.rounds:
            fh.write(json.dumps(r.to_dict()) + "\n")
    with open(out / "timing.jsonl", "w") as fh:
        for r in result.rounds:
            fh.write(json.dumps({"round": r.round, "seconds": r.seconds}) + "\n")
    with open(out / "objective.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "site", "objective_before", "objective_local", "objective_after", "global_drift"])
        for r in result.rounds:
            for i, name in enumerate(site_names):
                w.writerow([r.round, name, repr(r.objective_before[i]), repr(r.objective_local[i]), repr(r.objective_after[i]), repr(r.drift)])


def write_alignment(record, path: Path, perms=None) -> None:
    data = record.to_dict()
    if perms is not None:
        data["permutations"] = [p.to_dict() for p in perms]
    path.write_text(json.dumps(data, indent=1) + "\n")


def write_models(result: FederationResult, site_names, out: Path) -> None:
    for c, name in zip(result.clients, site_names):
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        save_matrix(d / "D.txt", c.D)
        save_matrix(d / "S.txt", c.S)
        save_matrix(d / "w.txt", c.clf.w[:, None])
        save_matrix(d / "b.txt", np.array([[c.clf.b]]))


def write_roi(report: FederationReport, out: Path) -> None:
    for name, roi in zip(report.site_names, report.roi):
        lines = [f"{i} {float(s)!r}" for i, s in enumerate(roi.scores)]
        (out / f"roi_scores_{name}.txt").write_text("\n".join(lines) + "\n")


def write_experiment(report: FederationReport, out, hyper_dict=None, figures: bool = True) -> list:
    """Write every artifact of ``report`` under ``out``; returns the file names."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(render_report(report, hyper_dict))
    files = ["report.txt"]
    if report.full is not None:
        write_rounds(report.full, report.site_names, out)
        write_alignment(report.full.record, out / "alignment.json")
        write_models(report.full, report.site_names, out / "models")
        files += ["rounds.jsonl", "timing.jsonl", "objective.csv", "alignment.json", "models/"]
        if figures:
            from .plotting import plot_objective

            plot_objective(report.full.rounds, report.site_names, out / "objective.png")
            files.append("objective.png")
    if report.roi is not None:
        write_roi(report, out)
        files += [f"roi_scores_{n}.txt" for n in report.site_names]
    return files
