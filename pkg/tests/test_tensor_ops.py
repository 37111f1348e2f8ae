"""Tensor kernel tests"""
import numpy as np
import pytest

from backend.errors import InvalidFrameCount, ShapeMismatch
from backend.models import ClipTensor, LayerKind
from backend.tensor_ops import (
    avg_pool,
    avg_pool_transpose,
    conv3d,
    conv3d_transpose,
    depthwise_temporal,
    depthwise_temporal_transpose,
    fold_batch_norm,
    global_avg_pool,
    layer_forward,
    max_pool,
    max_pool_winners,
    output_shape,
    scatter_to_winners,
    uniform_sample,
    uniform_sample_indices,
)
from tests.conftest import naive_conv3d


def test_relu_example():
    """Test ReLU on a small vector"""
    out = layer_forward(LayerKind.RELU, {}, np.array([[-1.0, 0.0, 2.0]], dtype=np.float32))
    assert out.tolist() == [[0.0, 0.0, 2.0]]
    assert out.dtype == np.float32


def test_temporal_convolution():
    """Test kernel [1, 0, -1] on frames [1, 2, 4] gives 3 at the middle frame"""
    x = np.array([1.0, 2.0, 4.0]).reshape(3, 1)
    assert depthwise_temporal(x, np.array([[1.0, 0.0, -1.0]]))[1, 0] == 3.0
    assert depthwise_temporal(x, np.array([[-1.0, 0.0, 1.0]]))[1, 0] == -3.0
    # first frame sees a zero before it
    assert depthwise_temporal(x, np.array([[1.0, 0.0, -1.0]]))[0, 0] == 2.0

    out = layer_forward(LayerKind.TEMPORAL_DEPTHWISE_CONV, {}, x.astype(np.float32),
                        {"weight": np.array([[1.0, 0.0, -1.0]], dtype=np.float32)})
    assert out[1, 0] == 3.0
    clip = np.array([1.0, 2.0, 4.0]).reshape(3, 1, 1, 1)
    assert conv3d(clip, np.array([1.0, 0.0, -1.0]).reshape(1, 1, 3, 1, 1))[1, 0, 0, 0] == 3.0


def test_residual_add_with_zero():
    """Test residual add of a tensor and zeros returns the tensor"""
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 4)).astype(np.float32)
    out = layer_forward(LayerKind.RESIDUAL_ADD, {}, [x, np.zeros_like(x)])
    assert np.array_equal(out, x)


def test_conv3d_matches_nested_loops():
    """Test conv3d against a nested-loop oracle on seeded random cases"""
    rng = np.random.default_rng(42)
    for _ in range(100):
        n, c, o = rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 4)
        h, w = rng.integers(3, 7), rng.integers(3, 7)
        kt, kh, kw = rng.choice([1, 2, 3]), rng.choice([1, 3]), rng.choice([1, 2, 3])
        stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        x = rng.normal(size=(n, c, h, w))
        weight = rng.normal(size=(o, c, kt, kh, kw))
        expected = naive_conv3d(x, weight, stride=stride)
        assert np.allclose(conv3d(x, weight, stride=stride), expected, atol=1e-9)


def test_conv3d_explicit_padding():
    """Test conv3d with explicit spatial padding"""
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 2, 5, 5))
    weight = rng.normal(size=(3, 2, 3, 3, 3))
    out = conv3d(x, weight, padding=(0, 0))
    assert out.shape == (4, 3, 3, 3)
    assert np.allclose(out, naive_conv3d(x, weight, padding=(0, 0)), atol=1e-9)


def test_conv3d_transpose_is_adjoint():
    """Test <conv(x), s> == <x, conv_T(s)> for random shapes"""
    rng = np.random.default_rng(7)
    for _ in range(25):
        x = rng.normal(size=(int(rng.integers(1, 5)), 2, 5, 6))
        weight = rng.normal(size=(3, 2, int(rng.choice([1, 2, 3])), 3, int(rng.choice([1, 3]))))
        stride = (int(rng.integers(1, 3)), 1)
        y = conv3d(x, weight, stride=stride)
        s = rng.normal(size=y.shape)
        back = conv3d_transpose(s, weight, x.shape, stride=stride)
        assert back.shape == x.shape
        assert np.isclose(np.sum(y * s), np.sum(x * back))


def test_depthwise_transpose_is_adjoint():
    """Test the depthwise temporal adjoint"""
    rng = np.random.default_rng(8)
    x = rng.normal(size=(6, 3, 2, 2))
    weight = rng.normal(size=(3, 4))
    s = rng.normal(size=x.shape)
    back = depthwise_temporal_transpose(s, weight, x.shape)
    assert np.isclose(np.sum(depthwise_temporal(x, weight) * s), np.sum(x * back))


def test_pooling():
    """Test max, average and global pooling"""
    x = np.array([[1.0, 4.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
    assert max_pool(x, 2, 2)[0, 0, 0, 0] == 4.0
    assert avg_pool(x, 2, 2)[0, 0, 0, 0] == 2.5
    assert global_avg_pool(x).tolist() == [[2.5]]

    rows, cols = max_pool_winners(x, 2, 2)
    relevance = scatter_to_winners(np.full((1, 1, 1, 1), 5.0), rows, cols, x.shape)
    assert relevance[0, 0].tolist() == [[0.0, 5.0], [0.0, 0.0]]

    s = np.random.default_rng(1).normal(size=(1, 1, 1, 1))
    assert np.isclose(np.sum(avg_pool(x, 2, 2) * s), np.sum(x * avg_pool_transpose(s, 2, 2, x.shape)))


def test_batch_norm_folding():
    """Test batch norm folds into scale and shift"""
    scale, shift = fold_batch_norm(np.array([2.0]), np.array([1.0]), np.array([0.5]), np.array([4.0]), eps=0.0)
    assert scale.tolist() == [1.0]
    assert shift.tolist() == [0.5]
    x = np.full((1, 1, 2, 2), 3.0, dtype=np.float32)
    out = layer_forward(LayerKind.BATCH_NORM, {}, x, {"scale": scale, "shift": shift})
    assert np.allclose(out, 3.5)


def test_output_shape_validation():
    """Test output shapes and shape errors"""
    weight = np.zeros((5, 3, 3, 3, 3))
    assert output_shape(LayerKind.CONV3D, {}, [(8, 3, 6, 6)], {"weight": weight}) == (8, 5, 6, 6)
    assert output_shape(LayerKind.SPATIAL_MAX_POOL, {"kernel": 2}, [(8, 5, 6, 6)]) == (8, 5, 3, 3)
    assert output_shape(LayerKind.GLOBAL_SPATIAL_AVG_POOL, {}, [(8, 5, 3, 3)]) == (8, 5)
    with pytest.raises(ShapeMismatch):
        output_shape(LayerKind.CONV3D, {}, [(8, 4, 6, 6)], {"weight": weight})
    with pytest.raises(ShapeMismatch):
        output_shape(LayerKind.RESIDUAL_ADD, {}, [(8, 5, 6, 6), (8, 5, 3, 3)])


def test_uniform_sample_indices():
    """Test segment-center frame selection"""
    assert uniform_sample_indices(16, 4).tolist() == [1, 5, 9, 13]
    assert uniform_sample_indices(8, 8).tolist() == list(range(8))
    assert uniform_sample_indices(8, 1).tolist() == [3]
    with pytest.raises(InvalidFrameCount):
        uniform_sample_indices(4, 5)


def test_uniform_sample_clip():
    """Test uniform sampling keeps id and label"""
    data = np.arange(16, dtype=np.float32).reshape(16, 1, 1, 1)
    clip = uniform_sample(ClipTensor(data=data, clip_id="v", label=2), 4)
    assert clip.data.ravel().tolist() == [1.0, 5.0, 9.0, 13.0]
    assert (clip.clip_id, clip.label) == ("v", 2)
