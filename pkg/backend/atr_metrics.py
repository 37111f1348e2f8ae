"""Action temporal relevance (ATR) metrics and aggregate statistics"""
import logging
from dataclasses import replace
from typing import Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from backend.errors import (
    DegenerateInput,
    EmptyInput,
    IndexOutOfRange,
    InvalidK,
    InvalidSigma,
    NegativeRelevance,
    NonFiniteValue,
    RateMismatch,
    ShapeMismatch,
)
from backend.models import (
    ATRReport,
    ClassATRSummary,
    DatasetSummary,
    RelevanceMatrix,
    RelevanceMode,
)
from config.settings import SCORE_THRESHOLD

logger = logging.getLogger(__name__)

NO_POSITIVE_LOGIT = "NoPositiveLogit"
UNDEFINED_FRAMES = "UndefinedFrames"
NO_DEFINED_WEIGHTED_FRAME = "NoDefinedWeightedFrame"


# ===== Frame and video ATR =====
def _check_sigma(sigma: float) -> None:
    if not 0.0 < sigma <= 1.0:
        raise InvalidSigma(f"sigma must lie in (0, 1], got {sigma}")


def shortest_window(row: np.ndarray, i: int, sigma: float) -> Optional[Tuple[int, int]]:
    """Shortest [l, r] around i holding at least sigma of the row's mass

    Ties go to the most centered window, then the leftmost. Returns None when
    the row has no positive mass.
    """
    row = np.asarray(row, dtype=np.float64)
    n = row.shape[0]
    prefix = np.concatenate(([0.0], np.cumsum(row)))
    total = prefix[-1]
    if total <= 0.0:
        return None
    lefts = np.arange(i + 1)
    rights = np.arange(i, n)
    sums = prefix[rights + 1][None, :] - prefix[lefts][:, None]
    li, ri = np.nonzero(sums >= sigma * total)
    if li.size == 0:
        return 0, n - 1
    l, r = lefts[li], rights[ri]
    best = np.lexsort((l, np.abs(l + r - 2 * i), r - l))[0]
    return int(l[best]), int(r[best])


def frame_atr(row: np.ndarray, i: int, sigma: float,
              mode: RelevanceMode = RelevanceMode.CLRP) -> int:
    """Length of the shortest window around frame i holding sigma of its relevance

    Returns 0 when the row carries no positive relevance. LRP rows are clamped
    at zero first; CLRP rows must already be nonnegative.
    """
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise ShapeMismatch(f"relevance row must be 1D, got {row.shape}")
    if not 0 <= i < row.shape[0]:
        raise IndexOutOfRange(f"frame {i} outside [0, {row.shape[0]})")
    _check_sigma(sigma)
    if not np.isfinite(row).all():
        raise NonFiniteValue(f"relevance row for frame {i} is not finite")
    if np.any(row < 0):
        if RelevanceMode(mode) == RelevanceMode.CLRP:
            raise NegativeRelevance(f"CLRP row for frame {i} has negative entries")
        row = np.maximum(row, 0.0)
    window = shortest_window(row, i, sigma)
    return 0 if window is None else window[1] - window[0] + 1


def video_atr(matrix: RelevanceMatrix, sigma: float) -> ATRReport:
    """Per-frame ATRs plus their logit-weighted mean (avg-ATR) and maximum (max-ATR)"""
    a = np.asarray(matrix.a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or np.asarray(matrix.logits).shape != (n,):
        raise ShapeMismatch(f"relevance matrix {a.shape} with {np.shape(matrix.logits)} logits")
    atr = np.array([frame_atr(a[i], i, sigma, matrix.mode) for i in range(n)], dtype=np.int64)

    positive = np.maximum(np.asarray(matrix.logits, dtype=np.float64), 0.0)
    flags: List[str] = []
    if positive.sum() > 0:
        weights = positive / positive.sum()
    else:
        weights = np.zeros(n)
        flags.append(NO_POSITIVE_LOGIT)
    defined = atr > 0
    if not defined.all():
        flags.append(UNDEFINED_FRAMES)

    effective = weights * defined
    if positive.sum() > 0 and effective.sum() == 0:
        # every positive-logit frame has an undefined ATR
        flags.append(NO_DEFINED_WEIGHTED_FRAME)
    avg_atr = float(np.sum(effective * atr) / np.sum(effective)) if effective.sum() > 0 else None
    max_atr = int(atr.max()) if defined.any() else 0
    if flags:
        logger.warning("Clip %s: %s", matrix.clip_id, ", ".join(flags))
    return ATRReport(
        clip_id=matrix.clip_id,
        target_class=matrix.target_class,
        sigma=float(sigma),
        per_frame_atr=tuple(int(r) for r in atr),
        weights=tuple(float(w) for w in weights),
        avg_atr=avg_atr,
        max_atr=max_atr,
        flags=tuple(flags),
    )


# ===== Video selection and aggregation =====
def select_analysis_videos(predictions: Iterable[Tuple[str, np.ndarray, Optional[int]]],
                           threshold: float = SCORE_THRESHOLD) -> List[str]:
    """Keep clips predicted correctly with a top probability above ``threshold``"""
    kept = []
    for clip_id, probabilities, label in predictions:
        probabilities = np.asarray(probabilities)
        if int(np.argmax(probabilities)) == label and float(probabilities.max()) > threshold:
            kept.append(clip_id)
    return kept


def aggregate(reports: Sequence[Tuple[ATRReport, Optional[int]]]) -> DatasetSummary:
    """Dataset means and per-class summaries (population std), folded in clip-id order

    Reports without a defined avg-ATR are skipped; a missing label falls back
    to the report's target class.
    """
    rows = [
        {
            "clip_id": report.clip_id,
            "class_id": report.target_class if label is None else int(label),
            "avg_atr": report.avg_atr,
            "max_atr": report.max_atr,
        }
        for report, label in reports
        if report.avg_atr is not None
    ]
    if not rows:
        raise EmptyInput("no report with a defined avg-ATR to aggregate")
    frame = pd.DataFrame(rows).sort_values("clip_id", kind="stable")
    per_class = (
        frame.groupby("class_id", sort=True)
        .agg(mean_avg_atr=("avg_atr", "mean"),
             std_avg_atr=("avg_atr", lambda values: float(np.std(values.to_numpy(), ddof=0))),
             mean_max_atr=("max_atr", "mean"),
             videos=("clip_id", "count"))
        .reset_index()
    )
    summaries = tuple(
        ClassATRSummary(
            class_id=int(item.class_id),
            mean_avg_atr=float(item.mean_avg_atr),
            std_avg_atr=float(item.std_avg_atr),
            mean_max_atr=float(item.mean_max_atr),
            count=int(item.videos),
        )
        for item in per_class.itertuples(index=False)
    )
    return DatasetSummary(
        mean_avg_atr=float(frame["avg_atr"].mean()),
        mean_max_atr=float(frame["max_atr"].mean()),
        per_class=summaries,
        video_count=len(frame),
    )


# ===== Dual-branch merging =====
def expand_logits(slow: np.ndarray, rate: int) -> np.ndarray:
    """Place slow frame t at fast frame t*rate, zeros elsewhere"""
    slow = np.asarray(slow, dtype=np.float64)
    expanded = np.zeros((slow.shape[0] * rate,) + slow.shape[1:], dtype=np.float64)
    expanded[::rate] = slow
    return expanded


def slowfast_merge(slow_logits: np.ndarray, fast_logits: np.ndarray, rate: int) -> np.ndarray:
    slow_logits = np.asarray(slow_logits)
    fast_logits = np.asarray(fast_logits)
    if rate < 1 or fast_logits.shape[0] != slow_logits.shape[0] * rate:
        raise RateMismatch(
            f"{fast_logits.shape[0]} fast frames is not {slow_logits.shape[0]} slow frames x rate {rate}")
    if fast_logits.shape[1:] != slow_logits.shape[1:]:
        raise ShapeMismatch(f"slow logits {slow_logits.shape} and fast logits {fast_logits.shape} differ")
    return expand_logits(slow_logits, rate) + fast_logits.astype(np.float64)


def block_sum(matrix: np.ndarray, rate: int) -> np.ndarray:
    """Sum every rate x rate block of a square matrix"""
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise ShapeMismatch(f"block_sum needs a square matrix, got {matrix.shape}")
    if rate < 1 or n % rate:
        raise RateMismatch(f"rate {rate} does not divide {n}")
    m = n // rate
    return matrix.reshape(m, rate, m, rate).sum(axis=(1, 3))


def block_sum_matrix(matrix: RelevanceMatrix, rate: int) -> RelevanceMatrix:
    """Block-sum a frame matrix down to slow-frame resolution, logits summed per block"""
    a = block_sum(matrix.a, rate)
    logits = np.asarray(matrix.logits, dtype=np.float64).reshape(a.shape[0], rate).sum(axis=1)
    return replace(matrix, a=a, logits=logits)


# ===== Statistics =====
def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DegenerateInput(f"pearson needs two equal-length vectors of 2+ values, got {x.shape}, {y.shape}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInput("pearson is undefined for zero-variance input")
    return float(np.clip(stats.pearsonr(x, y).statistic, -1.0, 1.0))


def topk_overlap(class_atr: Sequence[Tuple[int, float]], human_temporal: Set[int],
                 human_static: Set[int], k: int) -> Tuple[float, float]:
    """Percent overlap of the top-k (temporal) and bottom-k (static) classes with human sets"""
    if not 1 <= k <= len(class_atr):
        raise InvalidK(f"k={k} must lie in [1, {len(class_atr)}]")
    ranked = sorted(class_atr, key=lambda item: (-item[1], item[0]))
    bottom = sorted(class_atr, key=lambda item: (item[1], item[0]))
    temporal = {cls for cls, _ in ranked[:k]}
    static = {cls for cls, _ in bottom[:k]}
    return (len(temporal & set(human_temporal)) / k * 100.0,
            len(static & set(human_static)) / k * 100.0)
