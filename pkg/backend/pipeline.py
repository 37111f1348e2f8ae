"""Run orchestration: load inputs, run analyses and write the run directory"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from backend.atr_metrics import aggregate, block_sum_matrix, pearson, select_analysis_videos, topk_overlap, video_atr
from backend.errors import DegenerateInput, EmptyInput, InvalidFrameCount, InvalidInput, InvalidSpec
from backend.lrp_rules import PropagationRuleSet, default_rules, load_rule_overrides
from backend.model_graph import ensemble_prediction, forward, load_model
from backend.models import (
    ATRReport,
    ClipTensor,
    DatasetSummary,
    EvalResult,
    ModelGraph,
    PartialEvalResult,
    RelevanceMatrix,
)
from backend.partial_sampling import evaluate_clips, ordered_map, window_curve
from backend.relevance import relevance_matrix
from backend.reports import (
    CLIPS_DIR,
    CURVE_FILE,
    EVAL_FILE,
    HEATMAP_STEM,
    KEPT_LOGITS_DIR,
    MATRIX_FILE,
    REPORT_FILE,
    STATS_FILE,
    SUMMARY_FILE,
    heatmap_export,
    load_run_reports,
    read_summary,
    write_curve,
    write_eval,
    write_json,
    write_kept_logits,
    write_matrix,
    write_report,
    write_stats,
    write_summary,
)
from backend.schemas import HumanClassSets, RunConfig, parse_schema
from backend.synthetic import generate_synthetic
from backend.tensor_io import load_clip_dir, read_class_map
from backend.tensor_ops import uniform_sample
from frontend.charts import RelevanceCharts, write_html

logger = logging.getLogger(__name__)

SELECTION_FILE = "selection.json"


@dataclass(frozen=True)
class RelevanceRun:
    """Outcome of one relevance run"""
    reports: Tuple[ATRReport, ...]
    summary: DatasetSummary
    targets: Tuple[Tuple[str, int], ...]
    summary_path: Path


class RelevancePipeline:
    """Load a model and clips once, then run analyses into ``config.out``"""

    def __init__(self, config: RunConfig, model: Optional[ModelGraph] = None):
        self.config = config
        self.out_dir = Path(config.out)
        self.model = model or load_model(config.model)
        self.rules = self._load_rules()
        self.class_names = read_class_map(config.class_map) if config.class_map else None
        self._clips: Optional[List[ClipTensor]] = None

    def _load_rules(self) -> PropagationRuleSet:
        rules = load_rule_overrides(self.config.rules) if self.config.rules else default_rules()
        rules.validate(self.model)
        return rules

    # ===== Inputs =====
    def load_clips(self) -> List[ClipTensor]:
        """Clips sorted by id, uniform-sampled down to the model's frame count"""
        if self._clips is not None:
            return self._clips
        if self.config.synthetic is not None:
            spec = self.config.synthetic.model_copy(update={"seed": self.config.seed})
            raw = generate_synthetic(spec)
        else:
            raw = load_clip_dir(self.config.clips)
        if not raw:
            raise EmptyInput("clip source is empty")

        frames = self.model.expected_frames
        clips = []
        for clip in sorted(raw, key=lambda c: c.clip_id):
            if clip.frames < frames:
                raise InvalidFrameCount(f"clip {clip.clip_id} has {clip.frames} frames, model needs {frames}")
            if clip.frames > frames:
                logger.debug("Uniform-sampling %s from %d to %d frames", clip.clip_id, clip.frames, frames)
                clip = uniform_sample(clip, frames)
            if clip.label is not None and not 0 <= clip.label < self.model.num_classes:
                raise InvalidInput(f"clip {clip.clip_id} label {clip.label} outside [0, {self.model.num_classes})")
            clips.append(clip)
        logger.info("Using %d clips of %d frames", len(clips), frames)
        self._clips = clips
        return clips

    def predict(self, clips: Sequence[ClipTensor]) -> Dict[str, np.ndarray]:
        """Full-ensemble class probabilities per clip"""
        def probabilities(clip: ClipTensor) -> np.ndarray:
            logits, _ = forward(self.model, clip)
            return ensemble_prediction(logits, self.model.expected_frames)

        results = ordered_map(probabilities, clips, self.config.workers)
        return {clip.clip_id: probs for clip, probs in zip(clips, results)}

    def select_targets(self, clips: Sequence[ClipTensor],
                       predictions: Dict[str, np.ndarray]) -> List[Tuple[ClipTensor, int]]:
        """Labeled clips pass the correct-and-confident filter; unlabeled ones use their prediction"""
        labeled = [clip for clip in clips if clip.label is not None]
        if self.config.filter_predictions:
            kept = set(select_analysis_videos(
                (clip.clip_id, predictions[clip.clip_id], clip.label) for clip in labeled))
        else:
            kept = {clip.clip_id for clip in labeled}
        targets = []
        for clip in clips:
            if clip.label is None:
                target = int(np.argmax(predictions[clip.clip_id]))
            elif clip.clip_id in kept:
                target = clip.label
            else:
                continue
            if self.config.target_class is not None:
                target = self.config.target_class
            targets.append((clip, target))
        logger.info("Selected %d of %d clips for analysis", len(targets), len(clips))
        return targets

    # ===== Relevance and ATR =====
    def analyze_clip(self, clip: ClipTensor, target: int) -> Tuple[RelevanceMatrix, ATRReport]:
        matrix = relevance_matrix(self.model, clip, target, self.config.mode, self.rules,
                                  self.config.workers, self.config.clrp_clamp)
        if self.model.is_dual_branch:
            matrix = block_sum_matrix(matrix, self.model.slow_rate)
        return matrix, video_atr(matrix, self.config.sigma)

    def run_relevance(self) -> RelevanceRun:
        clips = self.load_clips()
        targets = self.select_targets(clips, self.predict(clips))
        if not targets:
            raise EmptyInput("no clip passed the prediction filter")

        reports = []
        for clip, target in targets:
            matrix, report = self.analyze_clip(clip, target)
            clip_dir = self.out_dir / CLIPS_DIR / clip.clip_id
            write_matrix(clip_dir / MATRIX_FILE, matrix)
            write_report(clip_dir / REPORT_FILE, report, self.class_names)
            if self.config.heatmaps:
                heatmap_export(matrix, clip_dir / HEATMAP_STEM)
            if self.config.html:
                write_html(RelevanceCharts.create_heatmap(matrix), clip_dir / f"{HEATMAP_STEM}.html")
            reports.append(report)

        labels = {clip.clip_id: clip.label for clip, _ in targets}
        summary = aggregate([(report, labels[report.clip_id]) for report in reports])
        write_json(self.out_dir / SELECTION_FILE,
                   {"selected": [{"clip_id": clip.clip_id, "class": target} for clip, target in targets]})
        if self.config.html:
            write_html(RelevanceCharts.create_class_atr_chart(summary, self.class_names),
                       self.out_dir / "class_atr.html")
        summary_path = write_summary(self.out_dir / SUMMARY_FILE, summary, self.class_names)
        return RelevanceRun(
            reports=tuple(reports),
            summary=summary,
            targets=tuple((clip.clip_id, target) for clip, target in targets),
            summary_path=summary_path,
        )

    # ===== Partial sampling and evaluation =====
    def run_partial_eval(self, sizes: Sequence[int], atr_run: Optional[Path] = None,
                         fill: str = "edge", dump_logits: bool = False) -> PartialEvalResult:
        reports = load_run_reports(atr_run) if atr_run else None
        result = window_curve(self.model, self.load_clips(), sizes, reports, fill, self.config.workers)
        write_curve(self.out_dir / CURVE_FILE, result)
        if dump_logits:
            write_kept_logits(self.out_dir / KEPT_LOGITS_DIR, result)
        if self.config.html:
            write_html(RelevanceCharts.create_window_curve(result), self.out_dir / "curve.html")
        return result

    def run_eval(self, frames_used: Sequence[int]) -> List[EvalResult]:
        clips = self.load_clips()
        results = [evaluate_clips(self.model, clips, count, self.config.workers) for count in frames_used]
        for result in results:
            logger.info("Ensemble of %d frame(s): accuracy %.4f", result.frames_used, result.accuracy)
        write_eval(self.out_dir / EVAL_FILE, results)
        return results

    # ===== Statistics =====
    def class_accuracy(self) -> pd.DataFrame:
        result = evaluate_clips(self.model, self.load_clips(), None, self.config.workers)
        rows = [{"class_id": clip.label,
                 "correct": int(np.argmax(result.predictions[clip.clip_id])) == clip.label}
                for clip in self.load_clips()]
        return pd.DataFrame(rows).groupby("class_id")["correct"].mean().rename("accuracy").reset_index()

    def run_stats(self, summary_path: Path, human_path: Optional[Path] = None,
                  k: Optional[int] = None) -> Dict[str, object]:
        """Pearson between per-class accuracy and avg-ATR, plus human/machine top-k overlap"""
        summary = read_summary(summary_path)
        class_atr = pd.DataFrame([{"class_id": c.class_id, "avg_atr": c.mean_avg_atr} for c in summary.per_class])
        merged = class_atr.merge(self.class_accuracy(), on="class_id", how="inner")
        stats: Dict[str, object] = {"classes": int(len(merged))}
        try:
            stats["pearson"] = pearson(merged["accuracy"], merged["avg_atr"])
        except DegenerateInput as exc:
            logger.warning("Pearson correlation skipped: %s", exc)
            stats["pearson"] = None
        if self.config.html and len(merged):
            labels = [f"Class {c}" for c in merged["class_id"]]
            write_html(RelevanceCharts.create_accuracy_scatter(merged["accuracy"], merged["avg_atr"], labels),
                       self.out_dir / "accuracy_vs_atr.html")

        if human_path is not None:
            try:
                raw = json.loads(Path(human_path).read_text())
            except (OSError, ValueError) as exc:
                raise InvalidInput(f"cannot read human class sets {human_path}: {exc}") from exc
            human = parse_schema(HumanClassSets, raw, InvalidSpec, str(human_path))
            k = k or min(len(human.temporal), len(human.static))
            ranked = [(int(c), float(v)) for c, v in zip(class_atr["class_id"], class_atr["avg_atr"])]
            temporal, static = topk_overlap(ranked, set(human.temporal), set(human.static), k)
            stats.update({"k": k, "temporal_overlap": temporal, "static_overlap": static})
        write_stats(self.out_dir / STATS_FILE, stats)
        return stats
