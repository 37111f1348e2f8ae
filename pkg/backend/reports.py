"""Report, heatmap and curve writers

Every file is written through a temporary file and renamed into place, so a
failing run never leaves a truncated report behind.
"""
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from PIL import Image

from backend.errors import InvalidInput, IOFailure
from backend.models import ATRReport, DatasetSummary, EvalResult, PartialEvalResult, RelevanceMatrix, RelevanceMode
from backend.schemas import (
    ATRReportDoc,
    ClassSummaryDoc,
    DatasetSummaryDoc,
    RelevanceMatrixDoc,
)
from backend.tensor_io import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MID_GRAY = 128

# Output layout of one run directory
SUMMARY_FILE = "summary.json"
CURVE_FILE = "curve.csv"
EVAL_FILE = "eval.csv"
STATS_FILE = "stats.json"
CLIPS_DIR = "clips"
REPORT_FILE = "report.json"
MATRIX_FILE = "matrix.json"
HEATMAP_STEM = "heatmap"
KEPT_LOGITS_DIR = "kept_logits"


def _class_name(class_id: int, class_names: Optional[Sequence[str]]) -> Optional[str]:
    if class_names and 0 <= class_id < len(class_names):
        return class_names[class_id]
    return None


def dump_json(document: Any) -> str:
    """Stable JSON text: sorted keys, no timestamps"""
    if hasattr(document, "model_dump"):
        document = document.model_dump(mode="json", by_alias=True)
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def write_json(path: PathLike, document: Any) -> Path:
    return atomic_write_text(path, dump_json(document))


# ===== ATR reports =====
def report_document(report: ATRReport, class_names: Optional[Sequence[str]] = None) -> ATRReportDoc:
    return ATRReportDoc(
        clip_id=report.clip_id,
        class_id=report.target_class,
        class_name=_class_name(report.target_class, class_names),
        sigma=report.sigma,
        per_frame_atr=list(report.per_frame_atr),
        weights=list(report.weights),
        avg_atr=report.avg_atr,
        max_atr=report.max_atr,
        relative_avg_atr=report.relative_avg_atr,
        relative_max_atr=report.relative_max_atr,
        flags=list(report.flags),
    )


def summary_document(summary: DatasetSummary,
                     class_names: Optional[Sequence[str]] = None) -> DatasetSummaryDoc:
    return DatasetSummaryDoc(
        mean_avg_atr=summary.mean_avg_atr,
        mean_max_atr=summary.mean_max_atr,
        video_count=summary.video_count,
        per_class=[
            ClassSummaryDoc(
                class_id=item.class_id,
                class_name=_class_name(item.class_id, class_names),
                mean_avg_atr=item.mean_avg_atr,
                std_avg_atr=item.std_avg_atr,
                mean_max_atr=item.mean_max_atr,
                count=item.count,
            )
            for item in summary.per_class
        ],
    )


def write_report(path: PathLike, report: ATRReport, class_names: Optional[Sequence[str]] = None) -> Path:
    return write_json(path, report_document(report, class_names))


def read_report(path: PathLike) -> ATRReport:
    try:
        document = ATRReportDoc.model_validate(json.loads(Path(path).read_text()))
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot read ATR report {path}: {exc}") from exc
    return ATRReport(
        clip_id=document.clip_id,
        target_class=document.class_id,
        sigma=document.sigma,
        per_frame_atr=tuple(document.per_frame_atr),
        weights=tuple(document.weights),
        avg_atr=document.avg_atr,
        max_atr=document.max_atr,
        flags=tuple(document.flags),
    )


def load_run_reports(run_dir: PathLike) -> Dict[str, ATRReport]:
    """Every ``clips/<clip_id>/report.json`` of a relevance run, keyed by clip id"""
    paths = sorted((Path(run_dir) / CLIPS_DIR).glob(f"*/{REPORT_FILE}"))
    if not paths:
        raise InvalidInput(f"no ATR reports under {run_dir}")
    reports = [read_report(path) for path in paths]
    return {report.clip_id: report for report in reports}


def read_summary(path: PathLike) -> DatasetSummaryDoc:
    try:
        return DatasetSummaryDoc.model_validate(json.loads(Path(path).read_text()))
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot read summary {path}: {exc}") from exc


def write_summary(path: PathLike, summary: DatasetSummary,
                  class_names: Optional[Sequence[str]] = None) -> Path:
    path = write_json(path, summary_document(summary, class_names))
    logger.info("Wrote dataset summary (%d videos) to %s", summary.video_count, path)
    return path


# ===== Relevance matrices =====
def write_matrix(path: PathLike, matrix: RelevanceMatrix) -> Path:
    document = RelevanceMatrixDoc(
        clip_id=matrix.clip_id,
        class_id=matrix.target_class,
        mode=matrix.mode,
        logits=[float(v) for v in matrix.logits],
        a=np.asarray(matrix.a, dtype=np.float64).tolist(),
    )
    return write_json(path, document)


def read_matrix(path: PathLike) -> RelevanceMatrix:
    try:
        raw = json.loads(Path(path).read_text())
        document = RelevanceMatrixDoc.model_validate(raw)
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot read relevance matrix {path}: {exc}") from exc
    a = np.asarray(document.a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or len(document.logits) != a.shape[0]:
        raise InvalidInput(f"{path}: matrix {a.shape} with {len(document.logits)} logits")
    return RelevanceMatrix(
        a=a,
        logits=np.asarray(document.logits, dtype=np.float64),
        target_class=document.class_id,
        clip_id=document.clip_id,
        mode=RelevanceMode(document.mode),
    )


# ===== Heatmaps =====
@dataclass(frozen=True)
class HeatmapFiles:
    csv: Path
    pgm: Path
    degenerate: bool = False


def heatmap_pixels(a: np.ndarray) -> np.ndarray:
    """8-bit grayscale: (v - min) / (max - min) scaled to 0..255, mid gray when flat"""
    a = np.asarray(a, dtype=np.float64)
    low, high = float(a.min()), float(a.max())
    if high == low:
        return np.full(a.shape, MID_GRAY, dtype=np.uint8)
    return np.rint((a - low) / (high - low) * 255.0).astype(np.uint8)


def heatmap_export(matrix: RelevanceMatrix, path: PathLike) -> HeatmapFiles:
    """Write ``<path>.csv`` (the N x N matrix) and ``<path>.pgm`` (target frames top to bottom)"""
    path = Path(path)
    a = np.asarray(matrix.a, dtype=np.float64)
    degenerate = bool(a.max() == a.min())
    if degenerate:
        logger.warning("DegenerateRange: relevance matrix of %s is constant, heatmap is mid gray",
                       matrix.clip_id)

    csv_text = pd.DataFrame(a).to_csv(index=False, header=False, float_format="%.9g")
    csv_path = atomic_write_text(path.with_suffix(".csv"), csv_text)

    buffer = io.BytesIO()
    try:
        Image.fromarray(heatmap_pixels(a), mode="L").save(buffer, format="PPM")
    except (OSError, ValueError) as exc:
        raise IOFailure(f"cannot encode heatmap for {matrix.clip_id}: {exc}") from exc
    pgm_path = atomic_write_bytes(path.with_suffix(".pgm"), buffer.getvalue())
    return HeatmapFiles(csv=csv_path, pgm=pgm_path, degenerate=degenerate)


def read_heatmap_csv(path: PathLike) -> np.ndarray:
    try:
        return pd.read_csv(path, header=None).to_numpy(dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot read heatmap csv {path}: {exc}") from exc


# ===== Curves and evaluation tables =====
def curve_frame(result: PartialEvalResult) -> pd.DataFrame:
    return pd.DataFrame(
        [{"window_size": label, "accuracy": accuracy, "clip_count": count}
         for label, accuracy, count in result.points],
        columns=["window_size", "accuracy", "clip_count"],
    )


def write_curve(path: PathLike, result: PartialEvalResult) -> Path:
    path = atomic_write_text(path, curve_frame(result).to_csv(index=False, float_format="%.9g"))
    logger.info("Wrote accuracy curve (%d points) to %s", len(result.runs), path)
    return path


def read_curve(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype={"window_size": str})
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot read curve {path}: {exc}") from exc


def write_kept_logits(directory: PathLike, result: PartialEvalResult) -> List[Path]:
    """Per-clip JSON of kept logit rows and window sizes for every window policy"""
    directory = Path(directory)
    clip_ids = sorted({clip_id for run in result.runs for clip_id in run.kept_logits})
    paths = []
    for clip_id in clip_ids:
        document: Dict[str, Any] = {"clip_id": clip_id, "runs": {}}
        for run in result.runs:
            if clip_id not in run.kept_logits:
                continue
            document["runs"][run.label] = {
                "window_sizes": list(run.window_sizes[clip_id]),
                "kept_logits": np.asarray(run.kept_logits[clip_id], dtype=np.float64).tolist(),
                "prediction": np.asarray(run.predictions[clip_id], dtype=np.float64).tolist(),
            }
        paths.append(write_json(directory / f"{clip_id}.json", document))
    return paths


def write_eval(path: PathLike, results: Iterable[EvalResult]) -> Path:
    frame = pd.DataFrame(
        [{"frames_used": r.frames_used, "accuracy": r.accuracy, "clip_count": r.clip_count} for r in results],
        columns=["frames_used", "accuracy", "clip_count"],
    )
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.9g"))


def write_stats(path: PathLike, stats: Mapping[str, Any]) -> Path:
    return write_json(path, dict(stats))
