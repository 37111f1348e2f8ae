"""Command-line interface for temporal relevance analysis

Every subcommand writes into ``--out``. Failures print a JSON error document
on stderr and exit with 2 (usage or configuration) or 3 (runtime failure).
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from backend.atr_metrics import block_sum_matrix, slowfast_merge, video_atr
from backend.errors import EXIT_OK, ConfigError, InvalidInput, InvalidSigma, RelevanceError
from backend.fixtures import generate_fixture_models
from backend.lrp_rules import default_rules, load_rule_overrides
from backend.model_graph import load_model, theoretical_temporal_rf
from backend.pipeline import RelevancePipeline
from backend.reports import dump_json, heatmap_export, read_matrix, write_matrix, write_report
from backend.schemas import RunConfig, SyntheticSpec, parse_schema
from backend.synthetic import parse_synthetic_spec, write_synthetic
from backend.tensor_io import atomic_write_text
from config.settings import DATA_DIR, DEFAULT_MODE, DEFAULT_SEED, DEFAULT_SIGMA, DEFAULT_WORKERS, LOG_LEVEL, OUTPUT_DIR
from frontend.charts import RelevanceCharts, write_html

logger = logging.getLogger(__name__)


def _int_list(text: str) -> List[str]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _positive_sizes(items: Sequence[str], frames: int, parser: argparse.ArgumentParser) -> List[int]:
    """Integers >= 1; "N" stands for the model's frame count"""
    sizes = []
    for item in items:
        if item.upper() == "N":
            sizes.append(frames)
            continue
        try:
            value = int(item)
        except ValueError:
            parser.error(f"invalid size {item!r}")
        if value < 1:
            parser.error(f"sizes must be >= 1, got {value}")
        sizes.append(value)
    return sizes


# ===== Parsers =====
def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", type=Path, help="model manifest (JSON)")
    common.add_argument("--clips", type=Path, help="directory of .tclp clips with labels.json")
    common.add_argument("--synthetic", type=Path, help="synthetic clip spec (JSON) used instead of --clips")
    common.add_argument("--class-map", type=Path, help="JSON array of class names")
    common.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    common.add_argument("--mode", choices=["lrp", "clrp"], default=DEFAULT_MODE)
    common.add_argument("--rules", type=Path, help="rule-set override file (JSON)")
    common.add_argument("--out", type=Path, default=Path(OUTPUT_DIR))
    common.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--html", action="store_true", help="also write plotly HTML figures")
    common.add_argument("--log-level", default=LOG_LEVEL)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="relevance", description="Temporal relevance analysis for video CNNs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("relevance", parents=[common], help="relevance matrices, ATR reports and summary")
    p.add_argument("--heatmaps", action="store_true", help="write CSV + PGM heatmaps per clip")
    p.add_argument("--no-filter", action="store_true", help="analyze labeled clips regardless of prediction")
    p.add_argument("--clrp-clamp", choices=["pixel", "frame"], default="pixel")
    p.add_argument("--target-class", type=int)

    p = sub.add_parser("partial-eval", parents=[common], help="accuracy vs. window size")
    p.add_argument("--sizes", type=_int_list, required=True, help="comma-separated window sizes, N = all frames")
    p.add_argument("--atr-run", type=Path, help="relevance run directory whose ATR reports set per-frame windows")
    p.add_argument("--fill", choices=["edge", "zero"], default="edge")
    p.add_argument("--dump-logits", action="store_true")

    p = sub.add_parser("eval", parents=[common], help="plain evaluation with 1/2/4/8/N-frame ensembles")
    p.add_argument("--frames-used", type=_int_list, default=["1", "2", "4", "8", "N"])

    p = sub.add_parser("stats", parents=[common], help="Pearson and top-k overlap statistics")
    p.add_argument("--summary", type=Path, required=True)
    p.add_argument("--human", type=Path, help='JSON {"temporal": [...], "static": [...]}')
    p.add_argument("--k", type=int)

    p = sub.add_parser("atr", parents=[common], help="ATR report for a saved relevance matrix")
    p.add_argument("--matrix", type=Path, required=True)

    p = sub.add_parser("heatmap", parents=[common], help="CSV + PGM heatmap for a saved relevance matrix")
    p.add_argument("--matrix", type=Path, required=True)

    p = sub.add_parser("gen-synth", parents=[common], help="write synthetic clips")
    p.add_argument("--spec", type=Path, help="synthetic spec JSON (flags below are ignored when given)")
    p.add_argument("--generator", choices=["static", "pattern", "noise"], default="static")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--span", type=int)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--prefix", default="clip")
    p.add_argument("--unlabeled", action="store_true")

    p = sub.add_parser("gen-fixtures", parents=[common], help="write the fixture models")
    p.add_argument("--with-bias", action="store_true")
    p.add_argument("--rate", type=int, default=4)

    p = sub.add_parser("merge-slowfast", parents=[common], help="merge slow/fast logits, block-sum a matrix")
    p.add_argument("--slow", type=Path, required=True, help="slow-branch logits CSV [m, K]")
    p.add_argument("--fast", type=Path, required=True, help="fast-branch logits CSV [n, K]")
    p.add_argument("--rate", type=int, required=True)
    p.add_argument("--matrix", type=Path, help="n x n relevance matrix JSON to block-sum")

    sub.add_parser("inspect", parents=[common], help="describe a model graph")
    return parser


# ===== Helpers =====
def _require(args: argparse.Namespace, parser: argparse.ArgumentParser, *names: str) -> None:
    for name in names:
        if getattr(args, name) is None:
            parser.error(f"--{name.replace('_', '-')} is required for {args.command}")


def _read_spec(path: Path) -> SyntheticSpec:
    try:
        raw = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read synthetic spec {path}: {exc}") from exc
    return parse_synthetic_spec(raw)


def _run_config(args: argparse.Namespace, **extra: Any) -> RunConfig:
    if not 0.0 < args.sigma <= 1.0:
        raise InvalidSigma(f"sigma must lie in (0, 1], got {args.sigma}")
    synthetic = _read_spec(args.synthetic) if args.synthetic is not None else None
    data = {
        "model": args.model,
        "clips": args.clips,
        "synthetic": synthetic,
        "class_map": args.class_map,
        "sigma": args.sigma,
        "mode": args.mode,
        "rules": args.rules,
        "out": args.out,
        "workers": args.workers,
        "seed": args.seed,
        "html": args.html,
        **extra,
    }
    return parse_schema(RunConfig, data, ConfigError, "run configuration")


def _read_logits(path: Path) -> np.ndarray:
    try:
        return pd.read_csv(path, header=None).to_numpy(dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot read logits {path}: {exc}") from exc


def _emit(document: Any) -> None:
    sys.stdout.write(dump_json(document))


# ===== Commands =====
def cmd_relevance(args, parser) -> None:
    _require(args, parser, "model")
    config = _run_config(args, heatmaps=args.heatmaps, filter_predictions=not args.no_filter,
                         clrp_clamp=args.clrp_clamp, target_class=args.target_class)
    run = RelevancePipeline(config).run_relevance()
    _emit({"summary": str(run.summary_path), "videos": run.summary.video_count,
           "mean_avg_atr": run.summary.mean_avg_atr, "mean_max_atr": run.summary.mean_max_atr})


def cmd_partial_eval(args, parser) -> None:
    _require(args, parser, "model")
    pipeline = RelevancePipeline(_run_config(args))
    sizes = _positive_sizes(args.sizes, pipeline.model.expected_frames, parser)
    result = pipeline.run_partial_eval(sizes, args.atr_run, args.fill, args.dump_logits)
    _emit({"points": [{"window_size": label, "accuracy": acc, "clip_count": count}
                      for label, acc, count in result.points]})


def cmd_eval(args, parser) -> None:
    _require(args, parser, "model")
    pipeline = RelevancePipeline(_run_config(args))
    counts = _positive_sizes(args.frames_used, pipeline.model.expected_frames, parser)
    counts = sorted({count for count in counts if count <= pipeline.model.expected_frames} or set(counts))
    results = pipeline.run_eval(counts)
    _emit({"results": [{"frames_used": r.frames_used, "accuracy": r.accuracy, "clip_count": r.clip_count}
                       for r in results]})


def cmd_stats(args, parser) -> None:
    _require(args, parser, "model")
    _emit(RelevancePipeline(_run_config(args)).run_stats(args.summary, args.human, args.k))


def cmd_atr(args, parser) -> None:
    if not 0.0 < args.sigma <= 1.0:
        raise InvalidSigma(f"sigma must lie in (0, 1], got {args.sigma}")
    matrix = read_matrix(args.matrix)
    report = video_atr(matrix, args.sigma)
    path = write_report(args.out / f"{matrix.clip_id}.report.json", report)
    logger.info("Wrote ATR report to %s", path)
    _emit({"clip_id": report.clip_id, "avg_atr": report.avg_atr, "max_atr": report.max_atr,
           "per_frame_atr": list(report.per_frame_atr), "flags": list(report.flags)})


def cmd_heatmap(args, parser) -> None:
    matrix = read_matrix(args.matrix)
    files = heatmap_export(matrix, args.out / f"{matrix.clip_id}.heatmap")
    if args.html:
        write_html(RelevanceCharts.create_heatmap(matrix), args.out / f"{matrix.clip_id}.heatmap.html")
    _emit({"csv": str(files.csv), "pgm": str(files.pgm), "degenerate": files.degenerate})


def cmd_gen_synth(args, parser) -> None:
    if args.spec is not None:
        spec = _read_spec(args.spec)
    else:
        spec = parse_synthetic_spec({
            "generator": args.generator, "frames": args.frames, "channels": args.channels,
            "height": args.height, "width": args.width, "num_classes": args.classes,
            "span": args.span, "count": args.count, "seed": args.seed, "prefix": args.prefix,
            "labeling": "none" if args.unlabeled else "round_robin",
        })
    paths = write_synthetic(spec, args.out)
    _emit({"clips": len(paths), "directory": str(args.out)})


def cmd_gen_fixtures(args, parser) -> None:
    out = args.out if args.out != Path(OUTPUT_DIR) else Path(DATA_DIR) / "fixtures"
    paths = generate_fixture_models(out, args.seed, args.with_bias, args.rate)
    _emit({name: str(path) for name, path in paths.items()})


def cmd_merge_slowfast(args, parser) -> None:
    merged = slowfast_merge(_read_logits(args.slow), _read_logits(args.fast), args.rate)
    path = atomic_write_text(args.out / "merged_logits.csv",
                             pd.DataFrame(merged).to_csv(index=False, header=False, float_format="%.9g"))
    document: Dict[str, Any] = {"merged_logits": str(path), "frames": int(merged.shape[0])}
    if args.matrix is not None:
        blocks = block_sum_matrix(read_matrix(args.matrix), args.rate)
        document["block_matrix"] = str(write_matrix(args.out / "block_matrix.json", blocks))
    _emit(document)


def cmd_inspect(args, parser) -> None:
    _require(args, parser, "model")
    model = load_model(args.model)
    rules = load_rule_overrides(args.rules) if args.rules else default_rules()
    rules.validate(model)
    _emit({
        "name": model.name,
        "expected_frames": model.expected_frames,
        "num_classes": model.num_classes,
        "input": [model.channels, model.height, model.width],
        "branches": {b.name: {"frame_stride": b.frame_stride, "head": model.heads[b.name]} for b in model.branches},
        "temporal_layers": [{"id": n.id, "kind": n.kind.value, "kernel_t": n.kernel_t}
                            for n in model.temporal_layers()],
        "theoretical_temporal_rf": theoretical_temporal_rf(model),
        "rules": {n.id: rules.rule_for(n).rule for n in model.nodes},
    })


COMMANDS: Dict[str, Callable[[argparse.Namespace, argparse.ArgumentParser], None]] = {
    "relevance": cmd_relevance,
    "partial-eval": cmd_partial_eval,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "atr": cmd_atr,
    "heatmap": cmd_heatmap,
    "gen-synth": cmd_gen_synth,
    "gen-fixtures": cmd_gen_fixtures,
    "merge-slowfast": cmd_merge_slowfast,
    "inspect": cmd_inspect,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=str(args.log_level).upper(),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        COMMANDS[args.command](args, parser)
    except RelevanceError as exc:
        logger.debug("Command %s failed", args.command, exc_info=True)
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return exc.exit_code
    return EXIT_OK
