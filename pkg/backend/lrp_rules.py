"""Relevance propagation rules and rule sets

A rule redistributes the relevance arriving at a layer's output onto that
layer's input. Rules are small frozen pydantic models so rule-set override
files validate the same way manifests do.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

from backend.errors import NonFiniteValue, RuleParseError, ShapeMismatch, UnsupportedRuleForLayer
from backend.models import INPUT, WEIGHTED_KINDS, LayerKind, ModelGraph, Node
from backend.tensor_ops import LinearMap, linear_map, max_pool, max_pool_winners, scatter_to_winners
from config.settings import POOL_EPSILON, RESIDUAL_EPSILON

logger = logging.getLogger(__name__)

Relevance = Union[np.ndarray, Tuple[np.ndarray, ...]]


# ===== Rule models =====
class _Rule(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ZPlus(_Rule):
    rule: Literal["ZPlus"] = "ZPlus"


class Epsilon(_Rule):
    rule: Literal["Epsilon"] = "Epsilon"
    eps: float = Field(POOL_EPSILON, ge=0.0)


class ZBeta(_Rule):
    """Bounded-input rule; ``low``/``high`` default to the model's input bounds"""
    rule: Literal["ZBeta"] = "ZBeta"
    low: Optional[List[float]] = None
    high: Optional[List[float]] = None


class Identity(_Rule):
    rule: Literal["Identity"] = "Identity"


class WinnerTakeAll(_Rule):
    rule: Literal["WinnerTakeAll"] = "WinnerTakeAll"


class ProportionalSplit(_Rule):
    rule: Literal["ProportionalSplit"] = "ProportionalSplit"
    eps: float = Field(RESIDUAL_EPSILON, ge=0.0)


Rule = Annotated[
    Union[ZPlus, Epsilon, ZBeta, Identity, WinnerTakeAll, ProportionalSplit],
    Field(discriminator="rule"),
]
_OVERRIDES = TypeAdapter(Dict[str, Rule])

# Rules each layer kind accepts; max pooling also takes the linearized-max reading
SUPPORTED_RULES: Mapping[LayerKind, Tuple[type, ...]] = {
    **{kind: (ZPlus, Epsilon, ZBeta) for kind in WEIGHTED_KINDS},
    LayerKind.SPATIAL_AVG_POOL: (Epsilon, ZPlus),
    LayerKind.GLOBAL_SPATIAL_AVG_POOL: (Epsilon, ZPlus),
    LayerKind.SPATIAL_MAX_POOL: (WinnerTakeAll, Epsilon, ZPlus),
    LayerKind.BATCH_NORM: (Identity,),
    LayerKind.RELU: (Identity,),
    LayerKind.RESIDUAL_ADD: (ProportionalSplit,),
}


# ===== Rule sets =====
def is_input_layer(node: Node) -> bool:
    """Weighted layers reading the raw clip take the input-layer rule"""
    return node.kind in WEIGHTED_KINDS and INPUT in node.inputs


@dataclass(frozen=True)
class PropagationRuleSet:
    by_kind: Mapping[LayerKind, _Rule]
    by_node: Mapping[str, _Rule] = field(default_factory=dict)
    input_rule: Optional[_Rule] = None

    def rule_for(self, node: Node) -> _Rule:
        """Node-id override, then the input-layer rule, then the layer-kind rule"""
        if node.id in self.by_node:
            return self.by_node[node.id]
        if self.input_rule is not None and is_input_layer(node):
            return self.input_rule
        return self.by_kind[node.kind]

    def with_overrides(self, overrides: Mapping[str, _Rule]) -> "PropagationRuleSet":
        """Merge override entries keyed by layer-kind name, node id or "input"

        Keys naming a node id win over layer kinds when both could match.
        """
        by_kind = dict(self.by_kind)
        by_node = dict(self.by_node)
        input_rule = self.input_rule
        kinds = {kind.value: kind for kind in LayerKind}
        for key, rule in overrides.items():
            if key == INPUT:
                input_rule = rule
            elif key in kinds:
                by_kind[kinds[key]] = rule
            else:
                by_node[key] = rule
        return replace(self, by_kind=by_kind, by_node=by_node, input_rule=input_rule)

    def validate(self, model: ModelGraph) -> None:
        """Fail early when a rule cannot be applied to the layer it resolves to"""
        known = {node.id for node in model.nodes}
        for node_id in self.by_node:
            if node_id not in known:
                raise RuleParseError(f"rule override names unknown node {node_id!r}")
        for node in model.nodes:
            check_supported(self.rule_for(node), node)


def default_rules() -> PropagationRuleSet:
    """z+ for weighted layers, epsilon for average pooling, z-beta on the input layer"""
    by_kind: Dict[LayerKind, _Rule] = {kind: ZPlus() for kind in WEIGHTED_KINDS}
    by_kind.update({
        LayerKind.SPATIAL_AVG_POOL: Epsilon(eps=POOL_EPSILON),
        LayerKind.GLOBAL_SPATIAL_AVG_POOL: Epsilon(eps=POOL_EPSILON),
        LayerKind.SPATIAL_MAX_POOL: WinnerTakeAll(),
        LayerKind.BATCH_NORM: Identity(),
        LayerKind.RELU: Identity(),
        LayerKind.RESIDUAL_ADD: ProportionalSplit(eps=RESIDUAL_EPSILON),
    })
    return PropagationRuleSet(by_kind=by_kind, input_rule=ZBeta())


def parse_rule_overrides(raw: Mapping) -> Dict[str, _Rule]:
    """Accept ``{"key": "ZPlus"}`` shorthand or ``{"key": {"rule": "Epsilon", "eps": 1e-6}}``"""
    if not isinstance(raw, Mapping):
        raise RuleParseError("rule overrides must be a JSON object")
    expanded = {key: {"rule": value} if isinstance(value, str) else value for key, value in raw.items()}
    try:
        return _OVERRIDES.validate_python(expanded)
    except ValidationError as exc:
        raise RuleParseError(str(exc)) from exc


def load_rule_overrides(path: Union[str, Path], base: Optional[PropagationRuleSet] = None) -> PropagationRuleSet:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise RuleParseError(f"cannot read rule overrides {path}: {exc}") from exc
    overrides = parse_rule_overrides(raw)
    logger.info("Loaded %d rule override(s) from %s", len(overrides), path)
    return (base or default_rules()).with_overrides(overrides)


def check_supported(rule: _Rule, node: Node) -> None:
    if not isinstance(rule, SUPPORTED_RULES[node.kind]):
        raise UnsupportedRuleForLayer(f"{rule.rule} cannot be applied to {node.kind.value} node {node.id!r}")


# ===== Rule application =====
def _safe_divide(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast(numerator, denominator).shape, dtype=np.float64)
    np.divide(numerator, denominator, out=out, where=denominator != 0)
    return out


def _stabilize(z: np.ndarray, eps: float) -> np.ndarray:
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def _bound_tensor(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    shape = (1, -1) + (1,) * (like.ndim - 2)
    return np.broadcast_to(np.asarray(values, dtype=np.float64).reshape(shape), like.shape)


def _weight(node: Node, weights: Optional[Mapping[str, np.ndarray]]) -> np.ndarray:
    if not weights or "weight" not in weights:
        raise ShapeMismatch(f"node {node.id!r} has no weight for relevance propagation")
    return weights["weight"].astype(np.float64)


def _linear_rule(rule: _Rule, node: Node, x: np.ndarray, relevance: np.ndarray,
                 weights: Optional[Mapping[str, np.ndarray]],
                 bounds: Optional[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    mapping: LinearMap = linear_map(node.kind, node.params)
    w = _weight(node, weights) if mapping.weighted else None
    shape = x.shape

    if isinstance(rule, ZPlus):
        w_pos = np.maximum(w, 0.0) if w is not None else None
        z = mapping.forward(x, w_pos)
        _check_shape(node, z, relevance)
        return x * mapping.adjoint(_safe_divide(relevance, z), w_pos, shape)

    if isinstance(rule, Epsilon):
        z = mapping.forward(x, w)
        _check_shape(node, z, relevance)
        return x * mapping.adjoint(_safe_divide(relevance, _stabilize(z, rule.eps)), w, shape)

    # ZBeta: x lies in [low, high] per channel
    if w is None:
        raise UnsupportedRuleForLayer(f"ZBeta needs a weighted layer, {node.id!r} is {node.kind.value}")
    low, high = bounds if bounds is not None else (None, None)
    if rule.low is not None:
        low = np.asarray(rule.low)
    if rule.high is not None:
        high = np.asarray(rule.high)
    if low is None or high is None:
        raise ShapeMismatch(f"ZBeta on {node.id!r} has no input bounds")
    channels = x.shape[1]
    low = np.broadcast_to(np.asarray(low, dtype=np.float64), (channels,))
    high = np.broadcast_to(np.asarray(high, dtype=np.float64), (channels,))
    lo, hi = _bound_tensor(low, x), _bound_tensor(high, x)
    w_pos, w_neg = np.maximum(w, 0.0), np.minimum(w, 0.0)
    z = mapping.forward(x, w) - mapping.forward(lo, w_pos) - mapping.forward(hi, w_neg)
    _check_shape(node, z, relevance)
    s = _safe_divide(relevance, z)
    return x * mapping.adjoint(s, w, shape) - lo * mapping.adjoint(s, w_pos, shape) \
        - hi * mapping.adjoint(s, w_neg, shape)


def _max_pool_rule(rule: _Rule, node: Node, x: np.ndarray, relevance: np.ndarray) -> np.ndarray:
    kernel = int(node.params["kernel"])
    stride = int(node.params.get("stride") or kernel)
    rows, cols = max_pool_winners(x, kernel, stride)
    if isinstance(rule, WinnerTakeAll):
        _check_shape(node, rows, relevance)
        return scatter_to_winners(relevance, rows, cols, x.shape)
    # Linearized max: only the winner carries weight, so z is the window maximum
    z = max_pool(x, kernel, stride)
    _check_shape(node, z, relevance)
    eps = rule.eps if isinstance(rule, Epsilon) else 0.0
    share = z * _safe_divide(relevance, _stabilize(z, eps) if eps else z)
    return scatter_to_winners(share, rows, cols, x.shape)


def _check_shape(node: Node, produced: np.ndarray, relevance: np.ndarray) -> None:
    if produced.shape != relevance.shape:
        raise ShapeMismatch(
            f"node {node.id!r}: relevance shape {relevance.shape} does not match output {produced.shape}")


def apply_rule(rule: _Rule, node: Node, input_act: Union[np.ndarray, Sequence[np.ndarray]],
               output_relevance: np.ndarray,
               weights: Optional[Mapping[str, np.ndarray]] = None,
               bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Relevance:
    """Redistribute ``output_relevance`` of ``node`` onto its input(s)

    Args:
        rule: propagation rule to apply
        node: layer the relevance arrives at
        input_act: the layer's input activation (a pair for ResidualAdd)
        output_relevance: relevance on the layer's output, float64
        weights: the layer's weight tensors; callers may pass modified weights
        bounds: per-channel (low, high) input bounds for ZBeta

    Returns:
        Input-side relevance, or a pair of tensors for ResidualAdd
    """
    check_supported(rule, node)
    relevance = np.asarray(output_relevance, dtype=np.float64)

    if node.kind == LayerKind.RESIDUAL_ADD:
        a, b = (np.asarray(part, dtype=np.float64) for part in input_act)
        _check_shape(node, a, relevance)
        pos_a, pos_b = np.maximum(a, 0.0), np.maximum(b, 0.0)
        total = pos_a + pos_b + rule.eps
        result: Relevance = (relevance * pos_a / total, relevance * pos_b / total)
    else:
        x = input_act if isinstance(input_act, np.ndarray) else input_act[0]
        x = np.asarray(x, dtype=np.float64)
        if isinstance(rule, Identity):
            _check_shape(node, x, relevance)
            result = relevance.copy()
        elif node.kind == LayerKind.SPATIAL_MAX_POOL:
            result = _max_pool_rule(rule, node, x, relevance)
        else:
            result = _linear_rule(rule, node, x, relevance, weights, bounds)

    for part in (result if isinstance(result, tuple) else (result,)):
        if not np.isfinite(part).all():
            raise NonFiniteValue(f"non-finite relevance at node {node.id!r} ({rule.rule})")
    return result
