"""Small hand-sized models covering every layer kind

Weights are seeded. By default every bias is zero and batch norms have zero
shift, which keeps LRP conservation exact up to roundoff.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from backend.model_graph import build_model, save_model
from backend.models import INPUT, ModelGraph
from backend.schemas import ManifestSpec
from backend.synthetic import class_symbols

logger = logging.getLogger(__name__)

CHANNELS = 3
FEATURES = 4
CLASSES = 3
SIZE = 6
FRAMES = 8
SLOW_FRAMES = 4


class _Builder:
    """Accumulate nodes and seeded weights for one fixture graph"""

    def __init__(self, name: str, frames: int, seed: int, with_bias: bool,
                 channels: int = CHANNELS, classes: int = CLASSES, size: int = SIZE):
        self.name = name
        self.frames = frames
        self.channels = channels
        self.classes = classes
        self.size = size
        self.with_bias = with_bias
        self.rng = np.random.default_rng(seed)
        self.nodes: List[Dict[str, Any]] = []
        self.weights: Dict[str, Dict[str, np.ndarray]] = {}
        self.branches: Optional[Dict[str, Dict[str, int]]] = None

    def add(self, node_id: str, kind: str, inputs: Sequence[str], branch: str = "main",
            params: Optional[Dict[str, Any]] = None, **weights: np.ndarray) -> str:
        self.nodes.append({"id": node_id, "kind": kind, "inputs": list(inputs),
                           "params": params or {}, "branch": branch})
        if weights:
            self.weights[node_id] = {name: np.asarray(w, dtype=np.float32) for name, w in weights.items()}
        return node_id

    def _bias(self, outputs: int) -> Dict[str, np.ndarray]:
        if not self.with_bias:
            return {}
        return {"bias": self.rng.normal(0.0, 0.05, size=outputs)}

    def conv(self, node_id: str, source: str, shape: Sequence[int], kind: str = "Conv3D", **kw) -> str:
        weight = self.rng.normal(0.0, 0.5, size=shape)
        return self.add(node_id, kind, [source], weight=weight, **self._bias(shape[0]), **kw)

    def temporal(self, node_id: str, source: str, features: int, kernel_t: int, **kw) -> str:
        weight = self.rng.normal(0.0, 0.5, size=(features, kernel_t))
        weight[:, (kernel_t - 1) // 2] = np.abs(weight[:, (kernel_t - 1) // 2]) + 0.5
        return self.add(node_id, "TemporalDepthwiseConv", [source], weight=weight,
                        **self._bias(features), **kw)

    def batch_norm(self, node_id: str, source: str, features: int, **kw) -> str:
        return self.add(node_id, "BatchNorm", [source],
                        gamma=self.rng.uniform(0.5, 1.5, size=features), beta=np.zeros(features),
                        mean=np.zeros(features), var=np.ones(features), **kw)

    def head(self, node_id: str, source: str, features: int, **kw) -> str:
        """Class 0 reads only positive weights; other rows are mostly positive"""
        weight = np.abs(self.rng.normal(0.0, 0.5, size=(self.classes, features))) + 0.05
        for row in range(1, self.classes):
            flip = self.rng.permutation(features)[:(features - 1) // 2]
            weight[row, flip] *= -1.0
        return self.add(node_id, "PerFrameHead", [source], weight=weight,
                        **self._bias(self.classes), **kw)

    def build(self) -> ModelGraph:
        spec = ManifestSpec.model_validate({
            "name": self.name,
            "num_classes": self.classes,
            "expected_frames": self.frames,
            "input": {"channels": self.channels, "height": self.size, "width": self.size},
            "nodes": self.nodes,
            "branches": self.branches,
        })
        return build_model(spec, self.weights)


# ===== Fixture models =====
def per_frame_2d(seed: int = 0, with_bias: bool = False, frames: int = FRAMES) -> ModelGraph:
    """Frame-wise 2D CNN with no temporal mixing"""
    b = _Builder("perframe2d", frames, seed, with_bias)
    x = b.conv("conv1", INPUT, (FEATURES, CHANNELS, 3, 3), kind="Conv2DPerFrame")
    x = b.batch_norm("bn1", x, FEATURES)
    x = b.add("relu1", "ReLU", [x])
    x = b.add("pool1", "SpatialMaxPool", [x], params={"kernel": 2})
    x = b.conv("conv2", x, (FEATURES, FEATURES, 3, 3), kind="Conv2DPerFrame")
    x = b.add("relu2", "ReLU", [x])
    x = b.add("gap", "GlobalSpatialAvgPool", [x])
    b.head("head", x, FEATURES)
    return b.build()


def temporal_diff_net(kernel_t: int = 3, seed: int = 0, with_bias: bool = False,
                      frames: int = FRAMES) -> ModelGraph:
    """Per-frame embedding followed by one depthwise temporal convolution of size ``kernel_t``"""
    b = _Builder(f"temporal_diff_k{kernel_t}", frames, seed, with_bias)
    x = b.conv("embed", INPUT, (FEATURES, CHANNELS, 1, 1), kind="Conv2DPerFrame")
    x = b.add("relu1", "ReLU", [x])
    x = b.temporal("tconv", x, FEATURES, kernel_t)
    x = b.add("relu2", "ReLU", [x])
    x = b.add("gap", "GlobalSpatialAvgPool", [x])
    b.head("head", x, FEATURES)
    return b.build()


def tiny_i3d(seed: int = 0, with_bias: bool = False, frames: int = FRAMES) -> ModelGraph:
    """Two 3x3x3 Conv3D blocks with a residual connection"""
    b = _Builder("tiny_i3d", frames, seed, with_bias)
    x = b.conv("conv1", INPUT, (FEATURES, CHANNELS, 3, 3, 3))
    x = b.batch_norm("bn1", x, FEATURES)
    x = b.add("relu1", "ReLU", [x])
    pooled = b.add("pool1", "SpatialAvgPool", [x], params={"kernel": 2})
    x = b.conv("conv2", pooled, (FEATURES, FEATURES, 3, 3, 3))
    x = b.batch_norm("bn2", x, FEATURES)
    x = b.add("add", "ResidualAdd", [x, pooled])
    x = b.add("relu2", "ReLU", [x])
    x = b.add("gap", "GlobalSpatialAvgPool", [x])
    b.head("head", x, FEATURES)
    return b.build()


def tiny_tam(seed: int = 0, with_bias: bool = False, frames: int = FRAMES) -> ModelGraph:
    """2D backbone with a depthwise temporal module on a residual path"""
    b = _Builder("tiny_tam", frames, seed, with_bias)
    x = b.conv("conv1", INPUT, (FEATURES, CHANNELS, 3, 3), kind="Conv2DPerFrame")
    x = b.batch_norm("bn1", x, FEATURES)
    skip = b.add("relu1", "ReLU", [x])
    x = b.temporal("tam", skip, FEATURES, 3)
    x = b.add("relu2", "ReLU", [x])
    x = b.add("add", "ResidualAdd", [x, skip])
    x = b.conv("proj", x, (FEATURES, FEATURES, 1, 1), kind="Conv2DPerFrame")
    x = b.add("relu3", "ReLU", [x])
    x = b.add("gap", "GlobalSpatialAvgPool", [x])
    b.head("head", x, FEATURES)
    return b.build()


def tiny_slowfast(rate: int = 4, seed: int = 0, with_bias: bool = False,
                  slow_frames: int = SLOW_FRAMES) -> ModelGraph:
    """Slow branch (every ``rate``-th frame, 2D + temporal module) beside a Conv3D fast branch"""
    b = _Builder("tiny_slowfast", slow_frames * rate, seed, with_bias)
    b.branches = {"slow": {"frame_stride": rate}, "fast": {"frame_stride": 1}}
    x = b.conv("slow_conv", INPUT, (FEATURES, CHANNELS, 3, 3), kind="Conv2DPerFrame", branch="slow")
    x = b.add("slow_relu1", "ReLU", [x], branch="slow")
    x = b.temporal("slow_tam", x, FEATURES, 3, branch="slow")
    x = b.add("slow_relu2", "ReLU", [x], branch="slow")
    x = b.add("slow_gap", "GlobalSpatialAvgPool", [x], branch="slow")
    b.head("slow_head", x, FEATURES, branch="slow")
    fast_features = FEATURES // 2
    x = b.conv("fast_conv", INPUT, (fast_features, CHANNELS, 3, 3, 3), branch="fast")
    x = b.add("fast_relu", "ReLU", [x], branch="fast")
    x = b.add("fast_gap", "GlobalSpatialAvgPool", [x], branch="fast")
    b.head("fast_head", x, fast_features, branch="fast")
    return b.build()


def pattern_detector(span: int = 3, num_classes: int = 2, channels: int = 3,
                     frames: int = 8, size: int = 8) -> ModelGraph:
    """Hand-built detector for synthetic temporal-pattern clips

    Unit c fires (0.5) only at the center of a ``span``-frame window whose
    frames carry class c's symbol sequence at full level.
    """
    symbols = class_symbols(num_classes, span)
    weight = np.zeros((num_classes, channels, span, 1, 1))
    for c, sequence in enumerate(symbols):
        for j, channel in enumerate(sequence):
            weight[c, channel, span - 1 - j, 0, 0] = 1.0
    b = _Builder(f"pattern_detector_k{span}", frames, 0, False,
                 channels=channels, classes=num_classes, size=size)
    x = b.add("detect", "Conv3D", [INPUT], weight=weight, bias=np.full(num_classes, -(span - 0.5)))
    x = b.add("relu", "ReLU", [x])
    x = b.add("gap", "GlobalSpatialAvgPool", [x])
    b.add("head", "PerFrameHead", [x], weight=np.eye(num_classes), bias=np.zeros(num_classes))
    return b.build()


def fixture_models(seed: int = 0, with_bias: bool = False, rate: int = 4,
                   diff_kernels: Sequence[int] = (3, 5, 7), pattern_span: int = 3) -> Dict[str, ModelGraph]:
    models = {"perframe2d": per_frame_2d(seed, with_bias)}
    for kernel_t in diff_kernels:
        models[f"temporal_diff_k{kernel_t}"] = temporal_diff_net(kernel_t, seed, with_bias)
    models["tiny_i3d"] = tiny_i3d(seed, with_bias)
    models["tiny_tam"] = tiny_tam(seed, with_bias)
    models["tiny_slowfast"] = tiny_slowfast(rate, seed, with_bias)
    models[f"pattern_detector_k{pattern_span}"] = pattern_detector(pattern_span)
    return models


def generate_fixture_models(directory: Union[str, Path], seed: int = 0, with_bias: bool = False,
                            rate: int = 4) -> Dict[str, Path]:
    """Write every fixture as ``<name>.json`` plus its TWGT blobs"""
    directory = Path(directory)
    paths = {name: save_model(model, directory, f"{name}.json")
             for name, model in fixture_models(seed, with_bias, rate).items()}
    logger.info("Wrote %d fixture models to %s", len(paths), directory)
    return paths
