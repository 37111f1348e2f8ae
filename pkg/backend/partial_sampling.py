"""Partial uniform sampling: window-limited inputs and sliding-window evaluation"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar

import numpy as np

from backend.errors import EmptyInput, InvalidInput, InvalidWindowSize, WindowOutOfRange
from backend.model_graph import ensemble_prediction, forward
from backend.models import (
    ATRReport,
    ClipTensor,
    EvalResult,
    ModelGraph,
    PartialEvalResult,
    PartialSamplingConfig,
    WindowRun,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")
Window = Tuple[int, int]
FILL_MODES = ("edge", "zero")


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """Map in a bounded thread pool; results keep the order of ``items``"""
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def window_bounds(i: int, size: int, frames: int) -> Window:
    """Window of ``size`` frames centered on i, shifted inward at the clip edges"""
    if not 1 <= size <= frames:
        raise InvalidWindowSize(f"window size {size} outside [1, {frames}]")
    if not 0 <= i < frames:
        raise WindowOutOfRange(f"frame {i} outside [0, {frames})")
    left = min(max(i - (size - 1) // 2, 0), frames - size)
    return left, left + size - 1


def build_partial_input(clip: ClipTensor, i: int, l: int, r: int, fill: str = "edge") -> ClipTensor:
    """Replace frames before l by f_l and after r by f_r (or by empty frames)"""
    n = clip.frames
    if not 0 <= l <= i <= r < n:
        raise WindowOutOfRange(f"window [{l}, {r}] around frame {i} invalid for {n} frames")
    if fill == "edge":
        data = clip.data[np.clip(np.arange(n), l, r)]
    elif fill == "zero":
        data = np.zeros_like(clip.data)
        data[l:r + 1] = clip.data[l:r + 1]
    else:
        raise InvalidInput(f"unknown fill mode {fill!r}, expected one of {FILL_MODES}")
    return ClipTensor(data=data, clip_id=clip.clip_id, label=clip.label)


def frame_window_sizes(clip: ClipTensor, config: PartialSamplingConfig) -> Tuple[int, ...]:
    n = clip.frames
    if config.policy == "fixed":
        return (int(config.size),) * n
    if config.policy != "atr":
        raise InvalidInput(f"unknown window policy {config.policy!r}")
    report: Optional[ATRReport] = config.reports.get(clip.clip_id)
    if report is None:
        logger.warning("No ATR report for %s, using full windows", clip.clip_id)
        return (n,) * n
    if report.frames != n:
        raise InvalidInput(f"ATR report for {clip.clip_id} covers {report.frames} frames, clip has {n}")
    # undefined ATR (0) falls back to the full clip
    return tuple(r if r > 0 else n for r in report.per_frame_atr)


def kept_logits(model: ModelGraph, clip: ClipTensor, sizes: Sequence[int], fill: str = "edge") -> np.ndarray:
    """Frame i's logit row from the input limited to frame i's window

    Frames sharing a window share one forward pass.
    """
    n = clip.frames
    windows: Dict[Window, List[int]] = {}
    for i, size in enumerate(sizes):
        windows.setdefault(window_bounds(i, int(size), n), []).append(i)
    rows = np.zeros((n, model.num_classes), dtype=np.float32)
    for (l, r), frames in sorted(windows.items()):
        logits, _ = forward(model, build_partial_input(clip, frames[0], l, r, fill))
        rows[frames] = logits.values[frames]
    return rows


def _labeled(clips: Sequence[ClipTensor]) -> Sequence[ClipTensor]:
    if not clips:
        raise EmptyInput("no clips to evaluate")
    unlabeled = [clip.clip_id for clip in clips if clip.label is None]
    if unlabeled:
        raise InvalidInput(f"evaluation needs labels, missing for {unlabeled[:5]}")
    return sorted(clips, key=lambda clip: clip.clip_id)


def sliding_eval(model: ModelGraph, clips: Sequence[ClipTensor], config: PartialSamplingConfig,
                 workers: int = 1) -> PartialEvalResult:
    """Keep only frame i's prediction from each window-limited input, then ensemble"""
    clips = _labeled(clips)
    if config.policy == "fixed":
        for clip in clips:
            if config.size is None or not 1 <= config.size <= clip.frames:
                raise InvalidWindowSize(f"window size {config.size} outside [1, {clip.frames}]")

    def evaluate(clip: ClipTensor) -> Tuple[Tuple[int, ...], np.ndarray, np.ndarray]:
        sizes = frame_window_sizes(clip, config)
        rows = kept_logits(model, clip, sizes, config.fill)
        return sizes, rows, ensemble_prediction(rows, clip.frames)

    outcomes = ordered_map(evaluate, clips, workers)
    predictions = {clip.clip_id: probs for clip, (_, _, probs) in zip(clips, outcomes)}
    correct = sum(int(np.argmax(predictions[clip.clip_id])) == clip.label for clip in clips)
    run = WindowRun(
        label=config.label,
        accuracy=correct / len(clips),
        clip_count=len(clips),
        predictions=predictions,
        window_sizes={clip.clip_id: sizes for clip, (sizes, _, _) in zip(clips, outcomes)},
        kept_logits={clip.clip_id: rows for clip, (_, rows, _) in zip(clips, outcomes)},
    )
    logger.info("Window %s: accuracy %.4f over %d clips", run.label, run.accuracy, run.clip_count)
    return PartialEvalResult(runs=(run,))


def window_curve(model: ModelGraph, clips: Sequence[ClipTensor], sizes: Sequence[int],
                 reports: Optional[Mapping[str, ATRReport]] = None,
                 fill: str = "edge", workers: int = 1) -> PartialEvalResult:
    """Accuracy per fixed window size, plus the per-frame ATR policy when reports are given"""
    if not sizes:
        raise InvalidWindowSize("at least one window size is required")
    clips = _labeled(clips)
    for size in sizes:
        if not 1 <= size <= model.expected_frames:
            raise InvalidWindowSize(f"window size {size} outside [1, {model.expected_frames}]")
    configs = [PartialSamplingConfig.fixed(int(size), fill) for size in sizes]
    if reports is not None:
        configs.append(PartialSamplingConfig.per_frame_atr(reports, fill))
    runs = tuple(sliding_eval(model, clips, config, workers).runs[0] for config in configs)
    return PartialEvalResult(runs=runs)


def evaluate_clips(model: ModelGraph, clips: Sequence[ClipTensor], frames_used: Optional[int] = None,
                   workers: int = 1) -> EvalResult:
    """Plain evaluation: full input, ensemble of ``frames_used`` frame predictions"""
    clips = _labeled(clips)
    frames_used = frames_used or model.expected_frames

    def predict(clip: ClipTensor) -> np.ndarray:
        logits, _ = forward(model, clip)
        return ensemble_prediction(logits, frames_used)

    predictions = dict(zip((clip.clip_id for clip in clips), ordered_map(predict, clips, workers)))
    correct = sum(int(np.argmax(predictions[clip.clip_id])) == clip.label for clip in clips)
    return EvalResult(frames_used=frames_used, accuracy=correct / len(clips),
                      clip_count=len(clips), predictions=predictions)
