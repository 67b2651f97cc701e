"""Report figures and tabular dumps written next to the JSON report."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import REGISTRY  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
    "svg.hashsalt": "mkge",
}

CSV_COLUMNS = ("question_id", "seeded", "verdict", "search_calls", "documents_ingested",
               "seed_nodes", "final_nodes", "answer_before", "answer_after")


def records_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([
            r.question_id, int(r.seeded), r.verdict.outcome.value if r.verdict else "",
            r.search_call_count, r.documents_ingested, r.seed_nodes, r.final_nodes,
            r.ans_before.answer if r.ans_before else "",
            r.ans_after.answer if r.ans_after else "",
        ])
    return buf.getvalue()


def _save(fig, path: Path) -> Path:
    # no timestamps in the file, so reruns give identical bytes
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else {"Date": None})
    plt.close(fig)
    return path


def plot_metric_volume(report, path: Path) -> Path:
    keys = [e.key.value for e in REGISTRY]
    docs = [report.per_metric[k]["documents"] for k in keys]
    added = [report.per_metric[k]["nodes_added"] for k in keys]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        x = range(len(keys))
        w = 0.4
        ax.bar([i - w / 2 for i in x], docs, w, label="documents ingested", color="#4c72b0")
        ax.bar([i + w / 2 for i in x], added, w, label="nodes added", color="#dd8452")
        ax.set_xticks(list(x))
        ax.set_xticklabels(keys, rotation=30, ha="right")
        ax.set_ylabel("total over question set")
        ax.set_title("Enrichment volume per metric cycle")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_growth(records, path: Path) -> Path:
    stages = ["seed"] + [e.key.value for e in REGISTRY]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        for r in records:
            if not r.growth:
                continue
            ax.plot(range(len(r.growth)), [n for n, _ in r.growth], marker="o", ms=3, lw=1,
                    label=r.question_id)
        ax.set_xticks(range(len(stages)))
        ax.set_xticklabels(stages, rotation=30, ha="right")
        ax.set_ylabel("graph nodes")
        ax.set_title("Knowledge-graph growth per query")
        if len(records) <= 12:
            ax.legend(frameon=False, ncol=2)
        return _save(fig, path)


def plot_verdicts(report, path: Path) -> Path:
    labels = ["Improved", "Unchanged", "Degraded"]
    values = [report.improved, report.unchanged, report.degraded]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.6, 3.0))
        ax.bar(labels, values, color=["#55a868", "#8c8c8c", "#c44e52"])
        ax.set_ylabel("questions")
        ax.set_title(f"IR = {report.improvement_rate:.2f}, CS = {report.collateral_stability:.2f}")
        return _save(fig, path)


def write_report_artifacts(report, records: Sequence, out_dir: Path) -> List[Path]:
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "records.csv"
    csv_path.write_text(records_csv(records), encoding="utf-8")
    return [
        csv_path,
        plot_metric_volume(report, fig_dir / "metric_volume.png"),
        plot_growth(records, fig_dir / "graph_growth.png"),
        plot_verdicts(report, fig_dir / "verdicts.png"),
    ]
