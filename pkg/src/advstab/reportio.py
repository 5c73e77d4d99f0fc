"""Report persistence: a JSON report with the full config echo, a CSV with
one row per checkpoint per trial, and per-figure plot-data CSVs of
(x, mean, stderr) triples. Numbers are written with 17 significant digits
so a JSON round trip reproduces every float bit-exactly."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .experiments import GapReport

__all__ = ["emit_report", "report_to_dict", "load_report"]


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def report_to_dict(report: GapReport) -> dict:
    return {
        "algorithm": report.algorithm,
        "config": report.config,
        "notes": list(report.notes),
        "bounds": [b.to_dict() for b in report.bounds],
        "trials": [
            {
                "seed": t.seed,
                "oracle_calls": t.oracle_calls,
                "forward_calls": t.forward_calls,
                "min_grad_delta_norm": t.min_grad_delta_norm,
                "grad_degenerate": t.grad_degenerate,
                "checkpoints": [c.to_dict() for c in t.checkpoints],
            }
            for t in report.trials
        ],
        "summary": {
            "mean_final_acc_gap": report.mean_final_acc_gap(),
            "std_final_acc_gap": report.std_final_acc_gap(),
            "mean_final_risk_gap": float(np.mean(report.final_risk_gaps())),
        },
    }


def emit_report(reports, fmt: str, path) -> list[Path]:
    """Write the reports under ``path`` (a directory). ``fmt`` selects
    'json' (report.json) or 'csv' (trace.csv plus plotdata files). Returns
    the written paths."""
    reports = list(reports)
    if not reports:
        raise DimensionError("no reports to emit")
    if fmt not in ("json", "csv"):
        raise ValueError(f"format must be 'json' or 'csv', got {fmt!r}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        target = out / "report.json"
        payload = [report_to_dict(r) for r in reports]
        target.write_text(json.dumps(payload if len(payload) > 1 else payload[0], indent=2))
        written.append(target)
        return written

    trace = out / "trace.csv"
    cols = [
        "report",
        "algorithm",
        "trial_seed",
        "iteration",
        "train_risk",
        "train_acc",
        "test_risk",
        "test_acc",
        "acc_gap",
        "risk_gap",
    ]
    with trace.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i, rep in enumerate(reports):
            for t in rep.trials:
                for c in t.checkpoints:
                    writer.writerow(
                        [i, rep.algorithm, t.seed, c.iteration]
                        + [_fmt(v) for v in (c.train_risk, c.train_acc, c.test_risk, c.test_acc, c.acc_gap, c.risk_gap)]
                    )
    written.append(trace)

    for i, rep in enumerate(reports):
        target = out / f"plotdata_gap_{i}_{rep.algorithm}.csv"
        with target.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "acc_gap_mean", "acc_gap_stderr"])
            for row in rep.checkpoint_table():
                writer.writerow([row["iteration"], _fmt(row["acc_gap_mean"]), _fmt(row["acc_gap_stderr"])])
        written.append(target)
    return written


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
