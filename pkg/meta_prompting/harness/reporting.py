"""
Metric files written under a run's output directory.

  train_metrics.csv   one row per epoch
  test_metrics.csv    one row per test episode, then an aggregate row
  curve.csv           step, mean query loss, mean query accuracy
  summary.json        the aggregate numbers
  suite_*             the comparison suite's tables
"""

import csv
import json
import logging
import os
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from meta_prompting.harness.suite import SuiteReport
from meta_prompting.models.run_metrics import RunMetrics

logger = logging.getLogger(__name__)

TRAIN_METRICS = "train_metrics.csv"
TEST_METRICS = "test_metrics.csv"
CURVE = "curve.csv"
SUMMARY = "summary.json"
SUITE_REPORT_MD = "suite_report.md"
SUITE_REPORT_JSON = "suite_report.json"
SUITE_RUNS = "suite_runs.csv"
SUITE_CURVES = "suite_curves.csv"


def _write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: str, data: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def write_training_csv(metrics: RunMetrics, path: str) -> None:
    _write_csv(
        path,
        ["epoch", "train_loss", "val_loss", "val_accuracy", "improved"],
        ([r.epoch, r.train_loss, r.val_loss, r.val_accuracy, int(r.improved)] for r in metrics.epochs),
    )


def write_test_csv(metrics: RunMetrics, path: str) -> None:
    rows: list[list[Any]] = [[r.episode, r.query_loss, r.accuracy] for r in metrics.test_episodes]
    rows.append(["mean", metrics.test_loss, metrics.test_accuracy])
    _write_csv(path, ["episode", "query_loss", "accuracy"], rows)


def write_curve_csv(curve: np.ndarray, path: str) -> None:
    _write_csv(path, ["step", "mean_loss", "mean_accuracy"], ([k, float(l), float(a)] for k, (l, a) in enumerate(curve)))


def write_run_metrics(metrics: RunMetrics, out_dir: str, extra: Optional[dict] = None) -> list[str]:
    """Every metric file the run has data for; returns the paths written."""
    written = []
    if metrics.epochs:
        written.append(os.path.join(out_dir, TRAIN_METRICS))
        write_training_csv(metrics, written[-1])
    if metrics.test_episodes:
        written.append(os.path.join(out_dir, TEST_METRICS))
        write_test_csv(metrics, written[-1])
    if metrics.curve is not None:
        written.append(os.path.join(out_dir, CURVE))
        write_curve_csv(metrics.curve, written[-1])
    written.append(os.path.join(out_dir, SUMMARY))
    _write_json(written[-1], {**metrics.summary(), **(extra or {})})
    logger.info(f"Wrote {', '.join(os.path.basename(p) for p in written)} to {out_dir}")
    return written


def _cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, tuple):
        return f"{100 * value[0]:.2f} ± {100 * value[1]:.2f}"
    return f"{100 * value:.2f}"


def _markdown_table(title: str, first: str, table: dict, columns: Sequence[str]) -> list[str]:
    lines = [f"## {title}", "", "| " + " | ".join([first, *columns]) + " |", "|" + "---|" * (len(columns) + 1)]
    for row, cells in table.items():
        lines.append("| " + " | ".join([row, *(_cell(cells.get(c)) for c in columns)]) + " |")
    lines.append("")
    return lines


def suite_markdown(report: SuiteReport) -> str:
    """Test accuracy tables (percent, mean ± std over seeds)."""
    lines = ["# Meta prompting comparison suite", ""]
    lines += _markdown_table("Initialization", "init", report.init_table(), report.settings)
    lines += _markdown_table(
        f"Template robustness (std across {len(report.templates)} templates)",
        "init",
        report.template_std_table(),
        report.settings,
    )
    lines += _markdown_table("Meta-learning algorithms", "algorithm", report.algorithm_table(), report.settings)
    transfer = report.transfer_table()
    if transfer:
        lines += _markdown_table("Distribution transfer", "init", transfer, report.settings)
    lines += ["## Templates", ""] + [f"{i}. `{t}`" for i, t in enumerate(report.templates, start=1)] + [""]
    return "\n".join(lines)


def write_suite_report(report: SuiteReport, out_dir: str) -> list[str]:
    paths = [os.path.join(out_dir, name) for name in (SUITE_REPORT_MD, SUITE_REPORT_JSON, SUITE_RUNS, SUITE_CURVES)]
    with open(paths[0], "w", encoding="utf-8") as f:
        f.write(suite_markdown(report))
    _write_json(paths[1], report.to_dict())
    header = ["study", "setting", "seed", "init", "algorithm", "template", "test_accuracy", "test_loss", "episodes"]
    _write_csv(paths[2], header, ([r.row()[h] for h in header] for r in report.runs))
    _write_csv(
        paths[3],
        ["setting", "init", "step", "mean_loss", "mean_accuracy"],
        (
            [setting, init, k, float(l), float(a)]
            for (setting, init), curve in report.curves().items()
            for k, (l, a) in enumerate(curve)
        ),
    )
    logger.info(f"Wrote suite report to {out_dir}")
    return paths
