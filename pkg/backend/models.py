"""In-memory domain types for temporal relevance analysis"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Tuple

import numpy as np

INPUT = "input"
MAIN_BRANCH = "main"


class LayerKind(str, Enum):
    CONV3D = "Conv3D"
    CONV2D_PER_FRAME = "Conv2DPerFrame"
    TEMPORAL_DEPTHWISE_CONV = "TemporalDepthwiseConv"
    LINEAR = "Linear"
    RELU = "ReLU"
    BATCH_NORM = "BatchNorm"
    SPATIAL_MAX_POOL = "SpatialMaxPool"
    SPATIAL_AVG_POOL = "SpatialAvgPool"
    GLOBAL_SPATIAL_AVG_POOL = "GlobalSpatialAvgPool"
    RESIDUAL_ADD = "ResidualAdd"
    PER_FRAME_HEAD = "PerFrameHead"


# Layers whose forward map is linear in the input plus a bias
WEIGHTED_KINDS = frozenset({
    LayerKind.CONV3D,
    LayerKind.CONV2D_PER_FRAME,
    LayerKind.TEMPORAL_DEPTHWISE_CONV,
    LayerKind.LINEAR,
    LayerKind.PER_FRAME_HEAD,
})

LINEAR_POOL_KINDS = frozenset({
    LayerKind.SPATIAL_AVG_POOL,
    LayerKind.GLOBAL_SPATIAL_AVG_POOL,
})


@dataclass(frozen=True)
class ClipTensor:
    """N sampled frames of one video, laid out [N, C, H, W]"""
    data: np.ndarray
    clip_id: str
    label: Optional[int] = None

    @property
    def frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def channels(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[2])

    @property
    def width(self) -> int:
        return int(self.data.shape[3])


@dataclass(frozen=True)
class Node:
    id: str
    kind: LayerKind
    params: Mapping[str, Any] = field(default_factory=dict)
    inputs: Tuple[str, ...] = (INPUT,)
    branch: str = MAIN_BRANCH

    @property
    def kernel_t(self) -> int:
        """Temporal kernel size (1 for layers that do not mix frames)"""
        return int(self.params.get("kernel_t", 1))

    @property
    def mixes_time(self) -> bool:
        return self.kernel_t > 1


@dataclass(frozen=True)
class Branch:
    name: str
    frame_stride: int = 1


@dataclass(frozen=True)
class ModelGraph:
    """Validated, immutable model: nodes in execution order plus weights"""
    name: str
    num_classes: int
    expected_frames: int
    channels: int
    height: int
    width: int
    nodes: Tuple[Node, ...]
    weights: Mapping[str, Mapping[str, np.ndarray]]
    branches: Tuple[Branch, ...]
    heads: Mapping[str, str]
    input_low: np.ndarray
    input_high: np.ndarray

    def branch_nodes(self, branch: str) -> Tuple[Node, ...]:
        return tuple(node for node in self.nodes if node.branch == branch)

    def node(self, node_id: str) -> Node:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def branch(self, name: str) -> Branch:
        for branch in self.branches:
            if branch.name == name:
                return branch
        raise KeyError(name)

    def branch_frames(self, name: str) -> int:
        return self.expected_frames // self.branch(name).frame_stride

    def temporal_layers(self) -> Tuple[Node, ...]:
        return tuple(node for node in self.nodes if node.mixes_time)

    @property
    def is_dual_branch(self) -> bool:
        return len(self.branches) > 1

    @property
    def slow_rate(self) -> int:
        """Frame stride of the slow branch (1 for single-branch graphs)"""
        return max(branch.frame_stride for branch in self.branches)


@dataclass(frozen=True)
class ActivationCache:
    """Post-activation outputs of one forward pass, keyed by node id"""
    activations: Mapping[str, np.ndarray]
    inputs: Mapping[str, np.ndarray]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.activations

    def __getitem__(self, node_id: str) -> np.ndarray:
        return self.activations[node_id]


@dataclass(frozen=True)
class FrameLogits:
    """Per-frame class logits [N, K]; dual-branch graphs keep each head too"""
    values: np.ndarray
    per_branch: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return int(self.values.shape[0])


class RelevanceMode(str, Enum):
    LRP = "lrp"
    CLRP = "clrp"


@dataclass(frozen=True)
class RelevanceRow:
    per_frame: np.ndarray
    target_frame: int
    target_class: int
    mode: RelevanceMode


@dataclass(frozen=True)
class RelevanceMatrix:
    """Frame-to-frame relevance: row i holds the relevance of every frame to frame i"""
    a: np.ndarray
    logits: np.ndarray
    target_class: int
    clip_id: str
    mode: RelevanceMode = RelevanceMode.CLRP

    @property
    def frames(self) -> int:
        return int(self.a.shape[0])


@dataclass(frozen=True)
class ATRReport:
    clip_id: str
    target_class: int
    sigma: float
    per_frame_atr: Tuple[int, ...]
    weights: Tuple[float, ...]
    avg_atr: Optional[float]
    max_atr: int
    flags: Tuple[str, ...] = ()

    @property
    def frames(self) -> int:
        return len(self.per_frame_atr)

    @property
    def relative_avg_atr(self) -> Optional[float]:
        return None if self.avg_atr is None else self.avg_atr / self.frames

    @property
    def relative_max_atr(self) -> float:
        return self.max_atr / self.frames


@dataclass(frozen=True)
class ClassATRSummary:
    class_id: int
    mean_avg_atr: float
    std_avg_atr: float
    mean_max_atr: float
    count: int


@dataclass(frozen=True)
class DatasetSummary:
    mean_avg_atr: float
    mean_max_atr: float
    per_class: Tuple[ClassATRSummary, ...]
    video_count: int


@dataclass(frozen=True)
class PartialSamplingConfig:
    """Window policy for sliding-window evaluation

    ``policy`` is "fixed" (every frame uses ``size``) or "atr" (frame i uses
    the ATR r_i of its clip's report, N when undefined).
    """
    policy: str = "fixed"
    size: Optional[int] = None
    reports: Mapping[str, ATRReport] = field(default_factory=dict)
    fill: str = "edge"

    @classmethod
    def fixed(cls, size: int, fill: str = "edge") -> "PartialSamplingConfig":
        return cls(policy="fixed", size=size, fill=fill)

    @classmethod
    def per_frame_atr(cls, reports: Mapping[str, ATRReport],
                      fill: str = "edge") -> "PartialSamplingConfig":
        return cls(policy="atr", reports=dict(reports), fill=fill)

    @property
    def label(self) -> str:
        return "ATR" if self.policy == "atr" else str(self.size)


@dataclass(frozen=True)
class WindowRun:
    """Outcome of one sliding-window evaluation over a clip set"""
    label: str
    accuracy: float
    clip_count: int
    predictions: Mapping[str, np.ndarray]
    window_sizes: Mapping[str, Tuple[int, ...]]
    kept_logits: Mapping[str, np.ndarray]


@dataclass(frozen=True)
class PartialEvalResult:
    runs: Tuple[WindowRun, ...]

    @property
    def points(self) -> Tuple[Tuple[str, float, int], ...]:
        return tuple((run.label, run.accuracy, run.clip_count) for run in self.runs)

    def run(self, label) -> WindowRun:
        for run in self.runs:
            if run.label == str(label):
                return run
        raise KeyError(label)

    def accuracy(self, label) -> float:
        return self.run(label).accuracy


@dataclass(frozen=True)
class EvalResult:
    """Plain (full-input) evaluation at a given ensemble size"""
    frames_used: int
    accuracy: float
    clip_count: int
    predictions: Mapping[str, np.ndarray]
