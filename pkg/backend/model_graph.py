"""Model definition loading, validation and per-frame forward execution"""
import json
import logging
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.special import softmax

from backend.atr_metrics import slowfast_merge
from backend.errors import (
    CyclicGraph,
    InvalidFrameCount,
    ManifestParseError,
    MissingWeightBlob,
    NonFiniteValue,
    ShapeMismatch,
    WeightShapeMismatch,
)
from backend.models import (
    INPUT,
    MAIN_BRANCH,
    WEIGHTED_KINDS,
    ActivationCache,
    Branch,
    ClipTensor,
    FrameLogits,
    LayerKind,
    ModelGraph,
    Node,
)
from backend.schemas import ManifestSpec, parse_schema
from backend.tensor_io import WEIGHT_SUFFIX, atomic_write_text, read_weight, write_weight
from backend.tensor_ops import fold_batch_norm, layer_forward, output_shape, uniform_sample_indices
from config.settings import ZBETA_HIGH, ZBETA_LOW

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
WeightMap = Mapping[str, Mapping[str, np.ndarray]]

# Expected rank of the "weight" tensor per weighted kind
WEIGHT_RANK = {
    LayerKind.CONV3D: 5,
    LayerKind.CONV2D_PER_FRAME: 4,
    LayerKind.TEMPORAL_DEPTHWISE_CONV: 2,
    LayerKind.LINEAR: 2,
    LayerKind.PER_FRAME_HEAD: 2,
}
BN_RAW = ("gamma", "beta", "mean", "var")


# ===== Validation helpers =====
def _branches(spec: ManifestSpec) -> Tuple[Branch, ...]:
    if not spec.branches:
        return (Branch(MAIN_BRANCH, 1),)
    branches = tuple(Branch(name, cfg.frame_stride) for name, cfg in sorted(spec.branches.items()))
    for branch in branches:
        if spec.expected_frames % branch.frame_stride:
            raise ManifestParseError(
                f"branch {branch.name!r}: stride {branch.frame_stride} does not divide {spec.expected_frames} frames")
    if len(branches) > 2:
        raise ManifestParseError("at most two branches (slow and fast) are supported")
    if len(branches) == 2 and min(b.frame_stride for b in branches) != 1:
        raise ManifestParseError("a dual-branch graph needs a fast branch with frame_stride 1")
    return branches


def _execution_order(spec: ManifestSpec) -> List[str]:
    """Topological order of node ids, stable with respect to manifest order"""
    position = {node.id: index for index, node in enumerate(spec.nodes)}
    sorter = TopologicalSorter({node.id: [i for i in node.inputs if i != INPUT] for node in spec.nodes})
    try:
        sorter.prepare()
    except CycleError as exc:
        raise CyclicGraph(f"graph {spec.name!r} has a cycle through {exc.args[1]}") from exc
    order: List[str] = []
    while sorter.is_active():
        ready = sorted(sorter.get_ready(), key=position.__getitem__)
        order.extend(ready)
        sorter.done(*ready)
    return order


def _normalize_params(kind: LayerKind, params: Mapping, weights: Mapping[str, np.ndarray]) -> Dict:
    params = dict(params)
    params.pop("kernel_t", None)
    weight = weights.get("weight")
    if kind == LayerKind.CONV3D:
        params["kernel_t"] = int(weight.shape[2])
    elif kind == LayerKind.TEMPORAL_DEPTHWISE_CONV:
        params["kernel_t"] = int(weight.shape[1])
    if kind in (LayerKind.SPATIAL_MAX_POOL, LayerKind.SPATIAL_AVG_POOL) and "kernel" not in params:
        raise ManifestParseError(f"{kind.value} needs params.kernel")
    return params


def _check_weights(node_id: str, kind: LayerKind, weights: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    for name, array in weights.items():
        if not np.isfinite(array).all():
            raise NonFiniteValue(f"node {node_id!r}: weight {name!r} is not finite")
    if kind in WEIGHTED_KINDS:
        if "weight" not in weights:
            raise ManifestParseError(f"node {node_id!r} ({kind.value}) declares no weight blob")
        weight = weights["weight"]
        if weight.ndim != WEIGHT_RANK[kind]:
            raise WeightShapeMismatch(
                f"node {node_id!r}: {kind.value} weight must be {WEIGHT_RANK[kind]}D, got {weight.shape}")
        bias = weights.get("bias")
        if bias is not None and bias.shape != (weight.shape[0],):
            raise WeightShapeMismatch(
                f"node {node_id!r}: bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    elif kind == LayerKind.BATCH_NORM:
        if all(name in weights for name in BN_RAW):
            scale, shift = fold_batch_norm(*(weights[name] for name in BN_RAW))
            weights = {"scale": scale, "shift": shift}
        elif not {"scale", "shift"} <= set(weights):
            raise ManifestParseError(
                f"node {node_id!r}: BatchNorm needs scale/shift or gamma/beta/mean/var blobs")
    return weights


def _zbeta_bounds(spec: ManifestSpec) -> Tuple[np.ndarray, np.ndarray]:
    channels = spec.input.channels
    norm = spec.input.normalization
    if norm is None:
        return np.full(channels, ZBETA_LOW), np.full(channels, ZBETA_HIGH)
    bounds = []
    for values in (norm.low, norm.high):
        array = np.asarray(values, dtype=np.float64)
        if array.size == 1:
            array = np.full(channels, float(array[0]))
        if array.shape != (channels,):
            raise ManifestParseError(f"normalization bounds need 1 or {channels} values, got {len(values)}")
        bounds.append(array)
    low, high = bounds
    if np.any(low > high):
        raise ManifestParseError("normalization low must not exceed high")
    return low, high


# ===== Construction =====
def build_model(spec: ManifestSpec, weights: WeightMap) -> ModelGraph:
    """Validate a manifest plus its weight tensors and return an immutable graph

    ``weights`` maps node id to a mapping of weight names (``weight``,
    ``bias``, ``scale``/``shift`` or ``gamma``/``beta``/``mean``/``var``) to arrays.
    """
    branches = _branches(spec)
    branch_names = {branch.name for branch in branches}
    specs = {}
    for node in spec.nodes:
        if node.id == INPUT or node.id in specs:
            raise ManifestParseError(f"duplicate or reserved node id {node.id!r}")
        if node.branch not in branch_names:
            raise ManifestParseError(f"node {node.id!r} uses undeclared branch {node.branch!r}")
        specs[node.id] = node
    for node in spec.nodes:
        expected_inputs = 2 if node.kind == LayerKind.RESIDUAL_ADD else 1
        if len(node.inputs) != expected_inputs:
            raise ManifestParseError(f"node {node.id!r} ({node.kind.value}) needs {expected_inputs} input(s)")
        for source in node.inputs:
            if source == INPUT:
                continue
            if source not in specs:
                raise ManifestParseError(f"node {node.id!r} reads unknown node {source!r}")
            if specs[source].branch != node.branch:
                raise ManifestParseError(f"node {node.id!r} reads across branches from {source!r}")

    order = _execution_order(spec)
    consumers = {source for node in spec.nodes for source in node.inputs}
    input_shapes = {b.name: (spec.expected_frames // b.frame_stride, spec.input.channels,
                             spec.input.height, spec.input.width) for b in branches}
    shapes: Dict[str, Tuple[int, ...]] = {}
    nodes: List[Node] = []
    checked: Dict[str, Dict[str, np.ndarray]] = {}
    heads: Dict[str, str] = {}

    for node_id in order:
        node = specs[node_id]
        node_weights = _check_weights(node_id, node.kind, dict(weights.get(node_id, {})))
        params = _normalize_params(node.kind, node.params, node_weights)
        in_shapes = [input_shapes[node.branch] if source == INPUT else shapes[source] for source in node.inputs]
        try:
            shapes[node_id] = output_shape(node.kind, params, in_shapes, node_weights)
            if node.kind == LayerKind.BATCH_NORM and node_weights["scale"].shape != (in_shapes[0][1],):
                raise ShapeMismatch(f"BatchNorm over {node_weights['scale'].shape} for input {in_shapes[0]}")
        except ShapeMismatch as exc:
            raise WeightShapeMismatch(f"node {node_id!r}: {exc}") from exc
        if node.kind == LayerKind.PER_FRAME_HEAD:
            if node.branch in heads:
                raise ManifestParseError(f"branch {node.branch!r} has more than one PerFrameHead")
            if node_id in consumers:
                raise ManifestParseError(f"PerFrameHead {node_id!r} must be terminal")
            if shapes[node_id][1] != spec.num_classes:
                raise WeightShapeMismatch(
                    f"head {node_id!r} emits {shapes[node_id][1]} classes, manifest declares {spec.num_classes}")
            heads[node.branch] = node_id
        checked[node_id] = node_weights
        nodes.append(Node(id=node_id, kind=node.kind, params=params,
                          inputs=tuple(node.inputs), branch=node.branch))

    missing = branch_names - set(heads)
    if missing:
        raise ManifestParseError(f"branch(es) {sorted(missing)} have no PerFrameHead")

    low, high = _zbeta_bounds(spec)
    model = ModelGraph(
        name=spec.name,
        num_classes=spec.num_classes,
        expected_frames=spec.expected_frames,
        channels=spec.input.channels,
        height=spec.input.height,
        width=spec.input.width,
        nodes=tuple(nodes),
        weights=checked,
        branches=branches,
        heads=heads,
        input_low=low,
        input_high=high,
    )
    logger.debug("Built graph %s: %d nodes, %d branch(es)", model.name, len(nodes), len(branches))
    return model


def load_model(manifest_path: PathLike) -> ModelGraph:
    """Read a JSON manifest and its TWGT weight blobs (paths relative to the manifest)"""
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text())
    except FileNotFoundError as exc:
        raise ManifestParseError(f"manifest {manifest_path} not found") from exc
    except (OSError, ValueError) as exc:
        raise ManifestParseError(f"cannot parse manifest {manifest_path}: {exc}") from exc
    spec = parse_schema(ManifestSpec, raw, ManifestParseError, str(manifest_path))

    weights: Dict[str, Dict[str, np.ndarray]] = {}
    for node in spec.nodes:
        blobs = {}
        for name, blob in node.weights.items():
            blob_path = manifest_path.parent / blob
            if not blob_path.is_file():
                raise MissingWeightBlob(f"node {node.id!r}: weight blob {blob_path} not found")
            try:
                blobs[name] = read_weight(blob_path)
            except ShapeMismatch as exc:
                raise WeightShapeMismatch(str(exc)) from exc
        weights[node.id] = blobs

    model = build_model(spec, weights)
    logger.info("Loaded model %s from %s (%d frames, %d classes, temporal RF %d)",
                model.name, manifest_path, model.expected_frames, model.num_classes,
                theoretical_temporal_rf(model))
    return model


def save_model(model: ModelGraph, directory: PathLike, filename: Optional[str] = None) -> Path:
    """Write a manifest plus one TWGT blob per weight tensor into ``directory``"""
    directory = Path(directory)
    filename = filename or f"{model.name}.json"
    blob_prefix = Path(filename).stem
    nodes = []
    for node in model.nodes:
        blobs = {}
        for name, array in sorted(model.weights.get(node.id, {}).items()):
            blob = f"{blob_prefix}.{node.id}.{name}{WEIGHT_SUFFIX}"
            write_weight(directory / blob, array)
            blobs[name] = blob
        params = {key: value for key, value in node.params.items() if key != "kernel_t"}
        nodes.append({"id": node.id, "kind": node.kind.value, "params": params,
                      "inputs": list(node.inputs), "weights": blobs, "branch": node.branch})
    manifest = {
        "name": model.name,
        "num_classes": model.num_classes,
        "expected_frames": model.expected_frames,
        "input": {
            "channels": model.channels,
            "height": model.height,
            "width": model.width,
            "normalization": {"low": model.input_low.tolist(), "high": model.input_high.tolist()},
        },
        "nodes": nodes,
        "branches": {b.name: {"frame_stride": b.frame_stride} for b in model.branches},
    }
    path = atomic_write_text(directory / filename, json.dumps(manifest, indent=2, sort_keys=True))
    logger.info("Wrote model %s to %s", model.name, path)
    return path


# ===== Execution =====
def branch_input(model: ModelGraph, clip: ClipTensor, branch: str) -> np.ndarray:
    """Frames a branch sees: every ``frame_stride``-th frame of the clip"""
    return np.ascontiguousarray(clip.data[::model.branch(branch).frame_stride], dtype=np.float32)


def forward(model: ModelGraph, clip: ClipTensor) -> Tuple[FrameLogits, ActivationCache]:
    """Run every branch of the graph, returning per-frame logits and the activation cache"""
    expected = (model.expected_frames, model.channels, model.height, model.width)
    if clip.data.shape != expected:
        raise ShapeMismatch(f"clip {clip.clip_id!r} has shape {clip.data.shape}, model expects {expected}")

    activations: Dict[str, np.ndarray] = {}
    inputs: Dict[str, np.ndarray] = {}
    for branch in model.branches:
        x = branch_input(model, clip, branch.name)
        inputs[branch.name] = x
        for node in model.branch_nodes(branch.name):
            sources = [x if source == INPUT else activations[source] for source in node.inputs]
            activations[node.id] = layer_forward(node.kind, node.params, sources, model.weights.get(node.id))

    per_branch = {name: activations[head] for name, head in model.heads.items()}
    if model.is_dual_branch:
        slow, fast = sorted(model.branches, key=lambda b: -b.frame_stride)
        values = slowfast_merge(per_branch[slow.name], per_branch[fast.name], slow.frame_stride)
        values = values.astype(np.float32)
    else:
        values = per_branch[model.branches[0].name]
    return FrameLogits(values=values, per_branch=per_branch), ActivationCache(activations, inputs)


def ensemble_prediction(logits: Union[FrameLogits, np.ndarray], frames_used: int) -> np.ndarray:
    """Softmax of the mean of ``frames_used`` evenly spaced per-frame logit rows"""
    values = logits.values if isinstance(logits, FrameLogits) else np.asarray(logits)
    if values.ndim != 2:
        raise ShapeMismatch(f"frame logits must be [N, K], got {values.shape}")
    if frames_used < 1 or frames_used > values.shape[0]:
        raise InvalidFrameCount(f"cannot ensemble {frames_used} of {values.shape[0]} frames")
    rows = values[uniform_sample_indices(values.shape[0], frames_used)].astype(np.float64)
    return softmax(rows.mean(axis=0))


def theoretical_temporal_rf(model: ModelGraph) -> int:
    """1 + sum of (kernel_t - 1) along the deepest path, in input frames"""
    best = 1
    for branch in model.branches:
        depth: Dict[str, int] = {INPUT: 0}
        for node in model.branch_nodes(branch.name):
            depth[node.id] = max(depth[source] for source in node.inputs) + node.kernel_t - 1
        best = max(best, 1 + branch.frame_stride * depth[model.heads[branch.name]])
    return best
