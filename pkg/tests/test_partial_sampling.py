"""Partial uniform sampling and sliding-window evaluation tests"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backend.errors import EmptyInput, InvalidInput, InvalidWindowSize, WindowOutOfRange
from backend.fixtures import pattern_detector
from backend.model_graph import forward
from backend.models import ATRReport, ClipTensor, PartialSamplingConfig
from backend.partial_sampling import (
    build_partial_input,
    evaluate_clips,
    frame_window_sizes,
    kept_logits,
    ordered_map,
    sliding_eval,
    window_bounds,
    window_curve,
)
from backend.synthetic import generate_synthetic
from tests.conftest import random_clip


def _frames(n=4):
    return ClipTensor(data=np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1), clip_id="f")


def _labeled_clips(model, count=6):
    return [random_clip(model, seed, label=seed % model.num_classes) for seed in range(count)]


def test_window_bounds():
    """Test centered windows shifted inward at the edges"""
    assert window_bounds(2, 3, 8) == (1, 3)
    assert window_bounds(0, 3, 8) == (0, 2)
    assert window_bounds(7, 3, 8) == (5, 7)
    assert window_bounds(3, 4, 8) == (2, 5)
    assert window_bounds(5, 8, 8) == (0, 7)
    with pytest.raises(InvalidWindowSize):
        window_bounds(0, 0, 8)
    with pytest.raises(InvalidWindowSize):
        window_bounds(0, 9, 8)
    with pytest.raises(WindowOutOfRange):
        window_bounds(8, 2, 8)


def test_build_partial_input():
    """Test frames outside the window are replaced by the window edges"""
    clip = _frames()
    assert build_partial_input(clip, 2, 1, 3).data.ravel().tolist() == [1.0, 1.0, 2.0, 3.0]
    assert np.array_equal(build_partial_input(clip, 1, 0, 3).data, clip.data)
    assert build_partial_input(clip, 2, 2, 2).data.ravel().tolist() == [2.0, 2.0, 2.0, 2.0]
    assert build_partial_input(clip, 2, 1, 2, fill="zero").data.ravel().tolist() == [0.0, 1.0, 2.0, 0.0]
    with pytest.raises(WindowOutOfRange):
        build_partial_input(clip, 0, 1, 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10), st.data())
def test_partial_input_idempotent(n, data):
    """Test applying the same window twice changes nothing more"""
    left = data.draw(st.integers(0, n - 1))
    right = data.draw(st.integers(left, n - 1))
    i = data.draw(st.integers(left, right))
    clip = _frames(n)
    once = build_partial_input(clip, i, left, right)
    assert np.array_equal(build_partial_input(once, i, left, right).data, once.data)
    assert np.array_equal(once.data[left:right + 1], clip.data[left:right + 1])


def test_full_window_reproduces_plain_evaluation(models):
    """Test window N matches the plain full-input evaluation bitwise"""
    model = models["tiny_tam"]
    clips = _labeled_clips(model)
    partial = sliding_eval(model, clips, PartialSamplingConfig.fixed(8)).runs[0]
    plain = evaluate_clips(model, clips)
    assert partial.accuracy == plain.accuracy
    for clip in clips:
        assert np.array_equal(partial.predictions[clip.clip_id], plain.predictions[clip.clip_id])


def test_per_frame_model_ignores_window(models):
    """Test window 1 on a frame-wise model gives the full predictions"""
    model = models["perframe2d"]
    clips = _labeled_clips(model)
    partial = sliding_eval(model, clips, PartialSamplingConfig.fixed(1)).runs[0]
    plain = evaluate_clips(model, clips)
    for clip in clips:
        assert np.allclose(partial.predictions[clip.clip_id], plain.predictions[clip.clip_id], atol=1e-6)


def test_window_covering_receptive_cone_is_exact(models):
    """Test windows containing the receptive cone keep frame logits unchanged"""
    model = models["temporal_diff_k3"]
    for seed in range(5):
        clip = random_clip(model, seed)
        full = forward(model, clip)[0].values
        for size in range(3, 9):
            rows = kept_logits(model, clip, [size] * 8)
            assert np.allclose(rows[1:-1], full[1:-1], atol=1e-5)


def test_saturation_on_temporal_pattern():
    """Test accuracy saturates once the window spans the pattern"""
    model = pattern_detector(span=3)
    clips = generate_synthetic({"generator": "pattern", "span": 3, "count": 8, "seed": 0})
    assert evaluate_clips(model, clips).accuracy == 1.0
    result = window_curve(model, clips, [1, 2, 3, 4, 8])
    assert result.accuracy(1) < result.accuracy(3)
    assert result.accuracy(2) < result.accuracy(3)
    assert result.accuracy(3) == result.accuracy(8) == result.accuracy(4)
    assert [label for label, _, _ in result.points] == ["1", "2", "3", "4", "8"]


def test_atr_window_policy(models):
    """Test per-frame ATR windows, with undefined frames using the whole clip"""
    model = models["temporal_diff_k3"]
    clips = _labeled_clips(model, 2)
    report = ATRReport(clip_id=clips[0].clip_id, target_class=0, sigma=0.975,
                       per_frame_atr=(1, 0, 3, 3, 3, 3, 3, 8), weights=(0.125,) * 8, avg_atr=3.0, max_atr=8)
    config = PartialSamplingConfig.per_frame_atr({clips[0].clip_id: report})
    assert frame_window_sizes(clips[0], config) == (1, 8, 3, 3, 3, 3, 3, 8)
    assert frame_window_sizes(clips[1], config) == (8,) * 8

    result = window_curve(model, clips, [8], reports={clips[0].clip_id: report})
    assert [run.label for run in result.runs] == ["8", "ATR"]
    assert result.run("ATR").window_sizes[clips[0].clip_id][1] == 8

    short = ATRReport(clip_id=clips[0].clip_id, target_class=0, sigma=0.975, per_frame_atr=(1,) * 4,
                      weights=(0.25,) * 4, avg_atr=1.0, max_atr=1)
    with pytest.raises(InvalidInput):
        frame_window_sizes(clips[0], PartialSamplingConfig.per_frame_atr({clips[0].clip_id: short}))


def test_evaluation_errors(models):
    """Test empty, unlabeled and out-of-range inputs"""
    model = models["temporal_diff_k3"]
    with pytest.raises(EmptyInput):
        window_curve(model, [], [1])
    with pytest.raises(InvalidInput):
        evaluate_clips(model, [random_clip(model, 0)])
    with pytest.raises(InvalidWindowSize):
        window_curve(model, _labeled_clips(model, 1), [0])
    with pytest.raises(InvalidWindowSize):
        window_curve(model, _labeled_clips(model, 1), [9])


def test_evaluation_independent_of_workers(models):
    """Test threaded evaluation gives identical predictions"""
    model = models["tiny_i3d"]
    clips = _labeled_clips(model, 4)
    single = window_curve(model, clips, [2, 8], workers=1)
    pooled = window_curve(model, clips, [2, 8], workers=8)
    for a, b in zip(single.runs, pooled.runs):
        assert a.accuracy == b.accuracy
        for clip in clips:
            assert np.array_equal(a.kept_logits[clip.clip_id], b.kept_logits[clip.clip_id])


def test_ordered_map_keeps_order():
    """Test results follow input order"""
    assert ordered_map(lambda x: x * x, list(range(20)), workers=4) == [x * x for x in range(20)]
