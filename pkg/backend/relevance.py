"""LRP and contrastive LRP backward passes producing frame-level relevance"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Literal, Mapping, Optional

import numpy as np

from backend.errors import IndexOutOfRange, InvalidInput
from backend.lrp_rules import PropagationRuleSet, apply_rule, default_rules
from backend.model_graph import forward
from backend.models import (
    INPUT,
    ActivationCache,
    ClipTensor,
    ModelGraph,
    RelevanceMatrix,
    RelevanceMode,
    RelevanceRow,
)

logger = logging.getLogger(__name__)

ClampLevel = Literal["pixel", "frame"]


def _check_target(model: ModelGraph, cache: ActivationCache, i: int, k: int) -> None:
    frames = model.expected_frames
    if not 0 <= i < frames:
        raise IndexOutOfRange(f"frame {i} outside [0, {frames})")
    if not 0 <= k < model.num_classes:
        raise IndexOutOfRange(f"class {k} outside [0, {model.num_classes})")
    missing = [head for head in model.heads.values() if head not in cache]
    if missing:
        raise InvalidInput(f"activation cache lacks head output(s) {missing}")


def _seeds(model: ModelGraph, cache: ActivationCache, i: int, k: int,
           total: Optional[float] = None) -> Dict[str, np.ndarray]:
    """Head-output relevance per branch: the logit of frame i, class k, and zeros elsewhere

    A branch with frame stride s owns frame i only when s divides i; the
    branch seeds then add up to the merged logit. ``total`` rescales the seeds
    to a different sum (used for the contrastive pass).
    """
    seeds: Dict[str, np.ndarray] = {}
    natural = 0.0
    for branch in model.branches:
        head = cache[model.heads[branch.name]]
        seed = np.zeros(head.shape, dtype=np.float64)
        if i % branch.frame_stride == 0:
            seed[i // branch.frame_stride, k] = float(head[i // branch.frame_stride, k])
            natural += seed[i // branch.frame_stride, k]
        seeds[branch.name] = seed
    if total is None:
        return seeds
    if natural != 0.0:
        return {name: seed * (total / natural) for name, seed in seeds.items()}
    fast = min(model.branches, key=lambda b: b.frame_stride)
    seeds[fast.name][i, k] = total
    return seeds


def _negated_heads(model: ModelGraph, k: int) -> Dict[str, Mapping[str, np.ndarray]]:
    overrides = {}
    for head in model.heads.values():
        weights = dict(model.weights[head])
        weight = weights["weight"].copy()
        weight[k] = -weight[k]
        weights["weight"] = weight
        overrides[head] = weights
    return overrides


def input_relevance(model: ModelGraph, cache: ActivationCache, seeds: Mapping[str, np.ndarray],
                    rules: PropagationRuleSet,
                    weight_overrides: Optional[Mapping[str, Mapping[str, np.ndarray]]] = None) -> np.ndarray:
    """Propagate head seeds back to the clip, returning pixel relevance [N, C, H, W]"""
    weight_overrides = weight_overrides or {}
    pixels = np.zeros((model.expected_frames, model.channels, model.height, model.width), dtype=np.float64)
    bounds = (model.input_low, model.input_high)
    for branch in model.branches:
        relevance: Dict[str, np.ndarray] = {model.heads[branch.name]: seeds[branch.name]}
        for node in reversed(model.branch_nodes(branch.name)):
            if node.id not in relevance:
                continue
            acts = [cache.inputs[branch.name] if source == INPUT else cache[source] for source in node.inputs]
            weights = weight_overrides.get(node.id, model.weights.get(node.id))
            result = apply_rule(rules.rule_for(node), node, acts if len(acts) > 1 else acts[0],
                                relevance.pop(node.id), weights, bounds)
            parts = result if isinstance(result, tuple) else (result,)
            for source, part in zip(node.inputs, parts):
                relevance[source] = relevance[source] + part if source in relevance else part
        if INPUT in relevance:
            pixels[::branch.frame_stride] += relevance[INPUT]
    return pixels


def frame_sums(pixels: np.ndarray) -> np.ndarray:
    """Sum pixel relevance over channels and space, one value per frame"""
    return pixels.reshape(pixels.shape[0], -1).sum(axis=1)


def lrp_backward(model: ModelGraph, cache: ActivationCache, i: int, k: int,
                 rules: Optional[PropagationRuleSet] = None) -> RelevanceRow:
    """Relevance of every input frame to the class-k logit of frame i"""
    rules = rules or default_rules()
    _check_target(model, cache, i, k)
    pixels = input_relevance(model, cache, _seeds(model, cache, i, k), rules)
    return RelevanceRow(per_frame=frame_sums(pixels), target_frame=i, target_class=k, mode=RelevanceMode.LRP)


def clrp_backward(model: ModelGraph, cache: ActivationCache, i: int, k: int,
                  rules: Optional[PropagationRuleSet] = None,
                  contrast_seed: Optional[float] = None,
                  clamp: ClampLevel = "pixel") -> RelevanceRow:
    """Contrastive relevance: max(0, R - R_bar), R_bar from the class-k head row negated

    Args:
        contrast_seed: seed of the negated pass; defaults to the logit itself,
            0 switches the contrastive pathway off
        clamp: "pixel" clamps the input relevance before the per-frame sum,
            "frame" clamps the per-frame sums

    With ``contrast_seed=0`` the "frame" clamp equals max(0, LRP row). The
    "pixel" clamp equals it only when every pixel's relevance is nonnegative,
    as under the default ZBeta input rule feeding ZPlus layers; signed input
    rules such as Epsilon make it larger than the "frame" clamp.
    """
    rules = rules or default_rules()
    _check_target(model, cache, i, k)
    positive = input_relevance(model, cache, _seeds(model, cache, i, k), rules)
    negative = input_relevance(model, cache, _seeds(model, cache, i, k, contrast_seed), rules,
                               _negated_heads(model, k))
    if clamp == "pixel":
        per_frame = frame_sums(np.maximum(positive - negative, 0.0))
    elif clamp == "frame":
        per_frame = np.maximum(frame_sums(positive) - frame_sums(negative), 0.0)
    else:
        raise InvalidInput(f"unknown clamp level {clamp!r}")
    return RelevanceRow(per_frame=per_frame, target_frame=i, target_class=k, mode=RelevanceMode.CLRP)


def relevance_matrix(model: ModelGraph, clip: ClipTensor, k: int,
                     mode: RelevanceMode = RelevanceMode.CLRP,
                     rules: Optional[PropagationRuleSet] = None,
                     workers: int = 1,
                     clamp: ClampLevel = "pixel") -> RelevanceMatrix:
    """Frame-to-frame relevance matrix for class k; row i comes from frame i's logit"""
    rules = rules or default_rules()
    rules.validate(model)
    mode = RelevanceMode(mode)
    logits, cache = forward(model, clip)
    if not 0 <= k < model.num_classes:
        raise IndexOutOfRange(f"class {k} outside [0, {model.num_classes})")

    def row(i: int) -> np.ndarray:
        if mode == RelevanceMode.LRP:
            return lrp_backward(model, cache, i, k, rules).per_frame
        return clrp_backward(model, cache, i, k, rules, clamp=clamp).per_frame

    frames = range(model.expected_frames)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, frames))
    else:
        rows = [row(i) for i in frames]
    logger.debug("Relevance matrix for %s (class %d, %s): %d rows", clip.clip_id, k, mode.value, len(rows))
    return RelevanceMatrix(
        a=np.stack(rows),
        logits=logits.values[:, k].astype(np.float64),
        target_class=k,
        clip_id=clip.clip_id,
        mode=mode,
    )
