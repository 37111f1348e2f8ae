"""Forward kernels for every supported layer kind

Activations are float32 arrays laid out [frames, channels, height, width]
(or [frames, features] after global pooling). Kernels accumulate in float64
and round the result to float32. Convolutions are true convolutions along time
(the temporal kernel axis is flipped) and cross-correlations in space, with
"same" zero padding in time; spatial padding defaults to "same" as well.
"""
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from backend.errors import InvalidFrameCount, NonFiniteValue, ShapeMismatch
from backend.models import WEIGHTED_KINDS, ClipTensor, LayerKind

Shape = Tuple[int, ...]


def same_padding(kernel: int) -> Tuple[int, int]:
    """Zero padding (before, after) that preserves the axis length"""
    before = (kernel - 1) // 2
    return before, kernel - 1 - before


def _spatial_padding(kh: int, kw: int, padding: Optional[Sequence[int]]) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    if padding is None:
        return same_padding(kh), same_padding(kw)
    ph, pw = int(padding[0]), int(padding[1])
    return (ph, ph), (pw, pw)


def _stride(stride: Optional[Sequence[int]]) -> Tuple[int, int]:
    if stride is None:
        return 1, 1
    if isinstance(stride, int):
        return stride, stride
    return int(stride[0]), int(stride[1])


def as_conv5d(weight: np.ndarray) -> np.ndarray:
    """Lift a per-frame 2D kernel [O, C, kh, kw] to [O, C, 1, kh, kw]"""
    if weight.ndim == 4:
        return weight[:, :, None, :, :]
    if weight.ndim != 5:
        raise ShapeMismatch(f"convolution weight must be 4D or 5D, got {weight.shape}")
    return weight


def fold_batch_norm(gamma: np.ndarray, beta: np.ndarray, mean: np.ndarray,
                    var: np.ndarray, eps: float = 1e-5) -> Tuple[np.ndarray, np.ndarray]:
    """Fold inference-mode batch norm into a per-channel scale and shift"""
    scale = gamma.astype(np.float64) / np.sqrt(var.astype(np.float64) + eps)
    shift = beta.astype(np.float64) - mean.astype(np.float64) * scale
    return scale.astype(np.float32), shift.astype(np.float32)


def _channel_view(vector: np.ndarray, ndim: int) -> np.ndarray:
    return vector.reshape((1, -1) + (1,) * (ndim - 2))


def _time_flipped(weight: np.ndarray) -> np.ndarray:
    """Reverse the temporal kernel axis so windows read frames as a convolution"""
    return weight[:, :, ::-1]


# ===== Convolutions =====
def conv3d(x: np.ndarray, weight: np.ndarray,
           padding: Optional[Sequence[int]] = None,
           stride: Optional[Sequence[int]] = None) -> np.ndarray:
    """Bias-free 3D convolution of [N, C, H, W] with [O, C, kt, kh, kw]"""
    weight = _time_flipped(as_conv5d(weight))
    if x.ndim != 4:
        raise ShapeMismatch(f"convolution expects [N, C, H, W] input, got {x.shape}")
    _, c, _, _ = x.shape
    _, ci, kt, kh, kw = weight.shape
    if ci != c:
        raise ShapeMismatch(f"input has {c} channels, kernel expects {ci}")
    sh, sw = _stride(stride)
    ph, pw = _spatial_padding(kh, kw, padding)
    xp = np.pad(x.astype(np.float64), (same_padding(kt), (0, 0), ph, pw))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {xp.shape[2:]}")
    windows = sliding_window_view(xp, (kt, kh, kw), axis=(0, 2, 3))[:, :, ::sh, ::sw]
    out = np.tensordot(windows, weight.astype(np.float64), axes=([1, 4, 5, 6], [1, 2, 3, 4]))
    return out.transpose(0, 3, 1, 2)


def conv3d_transpose(s: np.ndarray, weight: np.ndarray, input_shape: Shape,
                     padding: Optional[Sequence[int]] = None,
                     stride: Optional[Sequence[int]] = None) -> np.ndarray:
    """Adjoint of :func:`conv3d`: scatter output-side values back onto the input grid"""
    weight = _time_flipped(as_conv5d(weight)).astype(np.float64)
    n, c, h, w = input_shape
    _, _, kt, kh, kw = weight.shape
    sh, sw = _stride(stride)
    pt = same_padding(kt)
    ph, pw = _spatial_padding(kh, kw, padding)
    ho, wo = s.shape[2], s.shape[3]
    out = np.zeros((n + kt - 1, c, h + sum(ph), w + sum(pw)), dtype=np.float64)
    for t in range(kt):
        for i in range(kh):
            for j in range(kw):
                contribution = np.tensordot(s, weight[:, :, t, i, j], axes=([1], [0]))
                out[t:t + n, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += contribution.transpose(0, 3, 1, 2)
    return out[pt[0]:pt[0] + n, :, ph[0]:ph[0] + h, pw[0]:pw[0] + w]


def depthwise_temporal(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Bias-free per-channel temporal convolution, weight [C, kt]"""
    if x.ndim < 2 or weight.ndim != 2 or weight.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"depthwise kernel {weight.shape} does not fit input {x.shape}")
    n = x.shape[0]
    kt = weight.shape[1]
    pads = (same_padding(kt),) + ((0, 0),) * (x.ndim - 1)
    xp = np.pad(x.astype(np.float64), pads)
    w64 = weight[:, ::-1].astype(np.float64)
    out = np.zeros(x.shape, dtype=np.float64)
    for t in range(kt):
        out += _channel_view(w64[:, t], x.ndim) * xp[t:t + n]
    return out


def depthwise_temporal_transpose(s: np.ndarray, weight: np.ndarray, input_shape: Shape) -> np.ndarray:
    n = input_shape[0]
    kt = weight.shape[1]
    before, _ = same_padding(kt)
    w64 = weight[:, ::-1].astype(np.float64)
    out = np.zeros((n + kt - 1,) + tuple(input_shape[1:]), dtype=np.float64)
    for t in range(kt):
        out[t:t + n] += _channel_view(w64[:, t], s.ndim) * s
    return out[before:before + n]


def dense(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Bias-free per-frame fully connected map, [N, C] x [O, C] -> [N, O]"""
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"dense weight {weight.shape} does not fit input {x.shape}")
    return x.astype(np.float64) @ weight.astype(np.float64).T


def dense_transpose(s: np.ndarray, weight: np.ndarray, input_shape: Shape) -> np.ndarray:
    return s @ weight.astype(np.float64)


# ===== Pooling =====
def _pool_windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeMismatch(f"spatial pooling expects [N, C, H, W] input, got {x.shape}")
    if x.shape[2] < kernel or x.shape[3] < kernel:
        raise ShapeMismatch(f"pool kernel {kernel} larger than input {x.shape[2:]}")
    return sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]


def avg_pool(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    return _pool_windows(x.astype(np.float64), kernel, stride).mean(axis=(4, 5))


def avg_pool_transpose(s: np.ndarray, kernel: int, stride: int, input_shape: Shape) -> np.ndarray:
    out = np.zeros(input_shape, dtype=np.float64)
    ho, wo = s.shape[2], s.shape[3]
    share = s / float(kernel * kernel)
    for i in range(kernel):
        for j in range(kernel):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
    return out


def max_pool(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    return _pool_windows(x.astype(np.float64), kernel, stride).max(axis=(4, 5))


def max_pool_winners(x: np.ndarray, kernel: int, stride: int) -> Tuple[np.ndarray, np.ndarray]:
    """Input (row, col) of each window's maximum; the first index wins ties"""
    windows = _pool_windows(x, kernel, stride)
    n, c, ho, wo = windows.shape[:4]
    flat = windows.reshape(n, c, ho, wo, kernel * kernel).argmax(axis=-1)
    di, dj = np.divmod(flat, kernel)
    rows = di + (np.arange(ho) * stride)[None, None, :, None]
    cols = dj + (np.arange(wo) * stride)[None, None, None, :]
    return rows, cols


def scatter_to_winners(s: np.ndarray, rows: np.ndarray, cols: np.ndarray, input_shape: Shape) -> np.ndarray:
    out = np.zeros(input_shape, dtype=np.float64)
    n, c = s.shape[:2]
    frame_idx = np.arange(n)[:, None, None, None]
    channel_idx = np.arange(c)[None, :, None, None]
    np.add.at(out, (np.broadcast_to(frame_idx, s.shape), np.broadcast_to(channel_idx, s.shape), rows, cols), s)
    return out


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeMismatch(f"global pooling expects [N, C, H, W] input, got {x.shape}")
    return x.astype(np.float64).mean(axis=(2, 3))


def global_avg_pool_transpose(s: np.ndarray, input_shape: Shape) -> np.ndarray:
    h, w = input_shape[2], input_shape[3]
    return np.broadcast_to((s / float(h * w))[:, :, None, None], input_shape).copy()


# ===== Linear maps used by relevance rules =====
@dataclass(frozen=True)
class LinearMap:
    """Bias-free linear part of a layer and its adjoint

    ``forward(x, w)`` and ``adjoint(s, w, input_shape)`` take the weight
    explicitly so rules can substitute its positive or negative part.
    Weight-free maps (pooling) ignore ``w``.
    """
    forward: Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]
    adjoint: Callable[[np.ndarray, Optional[np.ndarray], Shape], np.ndarray]
    weighted: bool = True


def linear_map(kind: LayerKind, params: Mapping) -> LinearMap:
    padding = params.get("padding")
    stride = params.get("stride")
    if kind in (LayerKind.CONV3D, LayerKind.CONV2D_PER_FRAME):
        return LinearMap(
            forward=lambda x, w: conv3d(x, w, padding, stride),
            adjoint=lambda s, w, shape: conv3d_transpose(s, w, shape, padding, stride),
        )
    if kind == LayerKind.TEMPORAL_DEPTHWISE_CONV:
        return LinearMap(forward=depthwise_temporal, adjoint=depthwise_temporal_transpose)
    if kind in (LayerKind.LINEAR, LayerKind.PER_FRAME_HEAD):
        return LinearMap(forward=dense, adjoint=dense_transpose)
    if kind == LayerKind.SPATIAL_AVG_POOL:
        kernel = int(params["kernel"])
        pool_stride = int(params.get("stride") or kernel)
        return LinearMap(
            forward=lambda x, w: avg_pool(x, kernel, pool_stride),
            adjoint=lambda s, w, shape: avg_pool_transpose(s, kernel, pool_stride, shape),
            weighted=False,
        )
    if kind == LayerKind.GLOBAL_SPATIAL_AVG_POOL:
        return LinearMap(
            forward=lambda x, w: global_avg_pool(x),
            adjoint=lambda s, w, shape: global_avg_pool_transpose(s, shape),
            weighted=False,
        )
    raise ShapeMismatch(f"{kind.value} has no linear map")


# ===== Layer dispatch =====
def _check_finite(array: np.ndarray, where: str) -> None:
    if not np.isfinite(array).all():
        raise NonFiniteValue(f"non-finite value in {where}")


def layer_forward(kind: LayerKind, params: Mapping,
                  inputs: Union[np.ndarray, Sequence[np.ndarray]],
                  weights: Optional[Mapping[str, np.ndarray]] = None) -> np.ndarray:
    """Run one layer; ``inputs`` holds one array (two for ResidualAdd)"""
    if isinstance(inputs, np.ndarray):
        inputs = (inputs,)
    weights = weights or {}
    for array in inputs:
        _check_finite(array, f"{kind.value} input")
    x = inputs[0]

    if kind == LayerKind.RESIDUAL_ADD:
        if len(inputs) != 2 or inputs[0].shape != inputs[1].shape:
            raise ShapeMismatch(f"ResidualAdd needs two equal-shaped inputs, got {[a.shape for a in inputs]}")
        out = inputs[0].astype(np.float64) + inputs[1].astype(np.float64)
    elif kind == LayerKind.RELU:
        out = np.maximum(x.astype(np.float64), 0.0)
    elif kind == LayerKind.BATCH_NORM:
        if "scale" in weights:
            scale, shift = weights["scale"], weights["shift"]
        else:
            scale, shift = fold_batch_norm(weights["gamma"], weights["beta"], weights["mean"],
                                           weights["var"], float(params.get("eps", 1e-5)))
        if x.ndim < 2 or scale.shape[0] != x.shape[1]:
            raise ShapeMismatch(f"BatchNorm over {scale.shape[0]} channels, input {x.shape}")
        out = (x.astype(np.float64) * _channel_view(scale.astype(np.float64), x.ndim)
               + _channel_view(shift.astype(np.float64), x.ndim))
    elif kind == LayerKind.SPATIAL_MAX_POOL:
        kernel = int(params["kernel"])
        out = max_pool(x, kernel, int(params.get("stride") or kernel))
    else:
        weight = weights.get("weight")
        if kind in WEIGHTED_KINDS and weight is None:
            raise ShapeMismatch(f"{kind.value} layer has no weight")
        out = linear_map(kind, params).forward(x, weight)
        bias = weights.get("bias")
        if bias is not None:
            out = out + _channel_view(bias.astype(np.float64), out.ndim)

    out = out.astype(np.float32)
    _check_finite(out, f"{kind.value} output")
    return out


def output_shape(kind: LayerKind, params: Mapping, input_shapes: Sequence[Shape],
                 weights: Optional[Mapping[str, np.ndarray]] = None) -> Shape:
    """Shape a layer produces, validating its inputs and weights"""
    weights = weights or {}
    shape = tuple(input_shapes[0])
    if kind == LayerKind.RESIDUAL_ADD:
        if len(input_shapes) != 2 or tuple(input_shapes[1]) != shape:
            raise ShapeMismatch(f"ResidualAdd inputs differ: {list(input_shapes)}")
        return shape
    if kind in (LayerKind.RELU, LayerKind.BATCH_NORM):
        return shape
    if kind in (LayerKind.CONV3D, LayerKind.CONV2D_PER_FRAME):
        if len(shape) != 4:
            raise ShapeMismatch(f"{kind.value} expects [N, C, H, W] input, got {shape}")
        weight = as_conv5d(weights["weight"])
        o, ci, _, kh, kw = weight.shape
        if ci != shape[1]:
            raise ShapeMismatch(f"{kind.value} expects {ci} channels, got {shape[1]}")
        ph, pw = _spatial_padding(kh, kw, params.get("padding"))
        sh, sw = _stride(params.get("stride"))
        ho = (shape[2] + sum(ph) - kh) // sh + 1
        wo = (shape[3] + sum(pw) - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"{kind.value} kernel {kh}x{kw} larger than input {shape[2:]}")
        return (shape[0], o, ho, wo)
    if kind == LayerKind.TEMPORAL_DEPTHWISE_CONV:
        if len(shape) < 2 or weights["weight"].shape[0] != shape[1]:
            raise ShapeMismatch(f"depthwise kernel {weights['weight'].shape} does not fit {shape}")
        return shape
    if kind in (LayerKind.LINEAR, LayerKind.PER_FRAME_HEAD):
        weight = weights["weight"]
        if len(shape) != 2 or weight.shape[1] != shape[1]:
            raise ShapeMismatch(f"{kind.value} weight {weight.shape} does not fit input {shape}")
        return (shape[0], weight.shape[0])
    if kind in (LayerKind.SPATIAL_MAX_POOL, LayerKind.SPATIAL_AVG_POOL):
        if len(shape) != 4:
            raise ShapeMismatch(f"{kind.value} expects [N, C, H, W] input, got {shape}")
        kernel = int(params["kernel"])
        stride = int(params.get("stride") or kernel)
        if shape[2] < kernel or shape[3] < kernel:
            raise ShapeMismatch(f"pool kernel {kernel} larger than input {shape[2:]}")
        return (shape[0], shape[1], (shape[2] - kernel) // stride + 1, (shape[3] - kernel) // stride + 1)
    if kind == LayerKind.GLOBAL_SPATIAL_AVG_POOL:
        if len(shape) != 4:
            raise ShapeMismatch(f"GlobalSpatialAvgPool expects [N, C, H, W] input, got {shape}")
        return (shape[0], shape[1])
    raise ShapeMismatch(f"unknown layer kind {kind}")


# ===== Frame sampling =====
def uniform_sample_indices(total: int, count: int) -> np.ndarray:
    """Center frame of each of ``count`` equal segments over ``total`` frames"""
    if count < 1 or count > total:
        raise InvalidFrameCount(f"cannot take {count} segments from {total} frames")
    segment = np.arange(count)
    starts = segment * total // count
    ends = (segment + 1) * total // count - 1
    return (starts + ends) // 2


def uniform_sample(video: ClipTensor, count: int) -> ClipTensor:
    indices = uniform_sample_indices(video.frames, count)
    return replace(video, data=np.ascontiguousarray(video.data[indices]))
