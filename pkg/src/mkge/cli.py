"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 provider failure that
aborted the run. Machine-readable output goes to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import graph_store
from .config import ConfigError, build_providers, load_config, templates_for
from .export import sparse_highlight, to_dot
from .metrics import REGISTRY, MetricKey, compute_metric, detect_sparse
from .pipeline import Context, PipelineConfig, load_question_set, report_bytes, run_set
from .plotting import write_report_artifacts
from .providers import ProviderError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3

log = logging.getLogger("mkge")


def _fail(code: int, message: str) -> int:
    print(f"mkge: {message}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
        chat, search, embedder = build_providers(config)
        items = load_question_set(args.questions)
    except (ConfigError, OSError, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    if not items:
        return _fail(EXIT_CONFIG, f"no questions in {args.questions}")
    pconf = PipelineConfig(
        orientation=dict(config["metrics"]["orientation"]),
        f1_deadband=config["judge"]["f1_deadband"],
        louvain_seed=config["louvain"]["seed"],
        templates=templates_for(config),
    )
    ctx = Context(chat, search, embedder, pconf)
    workers = args.workers or config["pipeline"]["workers"]
    try:
        report, records = run_set(ctx, items, workers=workers)
    except ProviderError as exc:
        return _fail(EXIT_PROVIDER, f"provider failure aborted the run: {exc}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_dir = config.path("logs") or out
    log_dir.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(report_bytes(report, records))
    (log_dir / "events.jsonl").write_bytes(ctx.log.events_bytes())
    (log_dir / "snippets.jsonl").write_bytes(ctx.log.snippets_bytes())
    if not args.no_figures:
        write_report_artifacts(report, records, out)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def _read_graph(path: str) -> graph_store.KnowledgeGraph:
    return graph_store.loads(Path(path).read_bytes())


def cmd_metrics(args) -> int:
    try:
        graph = _read_graph(args.graph)
    except (OSError, graph_store.MalformedInput) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    projection = graph.undirected_projection()
    texts = graph.texts()
    keys = [MetricKey(args.metric)] if args.metric else [e.key for e in REGISTRY]
    out = []
    for key in keys:
        scores = compute_metric(projection, key, args.seed)
        sparse = detect_sparse(scores, key, texts) if scores else None
        out.append({
            "metric": key.value,
            "scores": scores,
            "flagged": sparse.flagged_count if sparse else 0,
            "sparse": sparse.records() if sparse else [],
        })
    print(json.dumps({"metrics": out}, indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_export(args) -> int:
    try:
        graph = _read_graph(args.graph)
    except (OSError, graph_store.MalformedInput) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    marked = sparse_highlight(graph, args.highlight, args.seed) if args.highlight else []
    sys.stdout.write(to_dot(graph, marked))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mkge", description="Metric-guided knowledge-graph enrichment")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the enrichment pipeline over a question set")
    run.add_argument("--config", help="TOML config (defaults: offline mode, bundled fixtures)")
    run.add_argument("--questions", required=True, help="JSONL question set")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--workers", type=int, default=0, help="parallel queries (isolated graphs)")
    run.add_argument("--no-figures", action="store_true", help="skip CSV and figure output")
    run.set_defaults(func=cmd_run)

    metric_names = [k.value for k in MetricKey]
    met = sub.add_parser("metrics", help="dump metric scores and sparse sets for a graph file")
    met.add_argument("--graph", required=True)
    met.add_argument("--metric", choices=metric_names)
    met.add_argument("--seed", type=int, default=0, help="Louvain seed")
    met.set_defaults(func=cmd_metrics)

    exp = sub.add_parser("export", help="export a graph file as DOT")
    exp.add_argument("--graph", required=True)
    exp.add_argument("--format", choices=["dot"], default="dot")
    exp.add_argument("--highlight", choices=metric_names, help="style this metric's sparse nodes")
    exp.add_argument("--seed", type=int, default=0, help="Louvain seed")
    exp.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
