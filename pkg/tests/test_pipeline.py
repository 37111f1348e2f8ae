"""Run orchestration tests"""
import json

import numpy as np
import pytest

from backend.errors import EmptyInput, InvalidFrameCount
from backend.pipeline import SELECTION_FILE, RelevancePipeline
from backend.reports import read_curve, read_summary
from backend.schemas import RunConfig
from backend.synthetic import write_synthetic


def _config(model_path, out, **overrides):
    data = {"model": model_path, "out": out,
            "synthetic": {"generator": "static", "height": 6, "width": 6, "num_classes": 3, "count": 3}}
    data.update(overrides)
    return RunConfig.model_validate(data)


def test_per_frame_summary_is_one(model_paths, tmp_path):
    """Test a frame-wise model on static clips has mean avg-ATR 1"""
    config = _config(model_paths["perframe2d"], tmp_path, filter_predictions=False, target_class=0, mode="lrp",
                     heatmaps=True, html=True)
    run = RelevancePipeline(config).run_relevance()
    assert run.summary.mean_avg_atr == 1.0
    assert run.summary.video_count == 3
    assert read_summary(tmp_path / "summary.json").mean_avg_atr == 1.0
    for clip_id in ("clip_0000", "clip_0001", "clip_0002"):
        clip_dir = tmp_path / "clips" / clip_id
        for name in ("matrix.json", "report.json", "heatmap.csv", "heatmap.pgm", "heatmap.html"):
            assert (clip_dir / name).exists(), name
    assert (tmp_path / "class_atr.html").exists()
    selection = json.loads((tmp_path / SELECTION_FILE).read_text())
    assert [item["class"] for item in selection["selected"]] == [0, 0, 0]


def test_summary_independent_of_workers(model_paths, tmp_path):
    """Test one and eight workers write byte-identical summaries"""
    texts = []
    for workers in (1, 8):
        out = tmp_path / f"w{workers}"
        config = _config(model_paths["tiny_tam"], out, workers=workers, filter_predictions=False, mode="lrp", target_class=0,
                         synthetic={"generator": "noise", "height": 6, "width": 6, "num_classes": 3, "count": 4})
        RelevancePipeline(config).run_relevance()
        texts.append((out / "summary.json").read_bytes())
    assert texts[0] == texts[1]


def test_same_seed_reruns_identically(model_paths, tmp_path):
    """Test rerunning a configuration reproduces the summary"""
    texts = []
    for run in ("a", "b"):
        config = _config(model_paths["tiny_i3d"], tmp_path / run, filter_predictions=False, target_class=0,
                         mode="lrp")
        RelevancePipeline(config).run_relevance()
        texts.append((tmp_path / run / "summary.json").read_text())
    assert texts[0] == texts[1]


def test_dual_branch_matrices_are_block_summed(model_paths, tmp_path):
    """Test SlowFast matrices are reported at slow-frame resolution"""
    config = _config(model_paths["tiny_slowfast"], tmp_path, filter_predictions=False, target_class=0, mode="lrp",
                     synthetic={"generator": "noise", "frames": 16, "height": 6, "width": 6,
                                "num_classes": 3, "count": 2})
    run = RelevancePipeline(config).run_relevance()
    document = json.loads((tmp_path / "clips" / "clip_0000" / "matrix.json").read_text())
    assert np.asarray(document["a"]).shape == (4, 4)
    assert len(document["logits"]) == 4
    assert all(report.frames == 4 for report in run.reports)


def test_filter_drops_everything(model_paths, tmp_path):
    """Test a run where no clip passes the prediction filter"""
    pipeline = RelevancePipeline(_config(model_paths["perframe2d"], tmp_path))
    clips = pipeline.load_clips()
    wrong = {clip.clip_id: np.eye(3)[(clip.label + 1) % 3] for clip in clips}
    assert pipeline.select_targets(clips, wrong) == []
    pipeline.predict = lambda clips: wrong
    with pytest.raises(EmptyInput):
        pipeline.run_relevance()


def test_clip_loading(model_paths, tmp_path):
    """Test longer clips are uniform-sampled and shorter ones rejected"""
    write_synthetic({"generator": "noise", "frames": 16, "height": 6, "width": 6, "count": 2}, tmp_path / "long")
    pipeline = RelevancePipeline(RunConfig(model=model_paths["tiny_i3d"], clips=tmp_path / "long", out=tmp_path))
    clips = pipeline.load_clips()
    assert [clip.frames for clip in clips] == [8, 8]
    assert [clip.label for clip in clips] == [0, 1]

    write_synthetic({"generator": "noise", "frames": 4, "height": 6, "width": 6, "count": 1}, tmp_path / "short")
    pipeline = RelevancePipeline(RunConfig(model=model_paths["tiny_i3d"], clips=tmp_path / "short", out=tmp_path))
    with pytest.raises(InvalidFrameCount):
        pipeline.load_clips()


def test_partial_eval_and_eval_agree(model_paths, tmp_path):
    """Test the full window equals plain evaluation and both files are written"""
    pipeline = RelevancePipeline(_config(model_paths["temporal_diff_k3"], tmp_path,
                                         synthetic={"generator": "noise", "height": 6, "width": 6,
                                                    "num_classes": 3, "count": 6}))
    curve = pipeline.run_partial_eval([1, 8], dump_logits=True)
    results = pipeline.run_eval([1, 2, 4, 8])
    assert curve.accuracy(8) == results[-1].accuracy
    frame = read_curve(tmp_path / "curve.csv")
    assert frame["window_size"].tolist() == ["1", "8"]
    assert (tmp_path / "eval.csv").exists()
    assert len(list((tmp_path / "kept_logits").glob("*.json"))) == 6


def test_partial_eval_with_atr_run(model_paths, tmp_path):
    """Test per-frame ATR windows from a previous relevance run"""
    config = _config(model_paths["temporal_diff_k3"], tmp_path / "run", filter_predictions=False, html=True,
                     target_class=0, mode="lrp")
    RelevancePipeline(config).run_relevance()
    pipeline = RelevancePipeline(config)
    result = pipeline.run_partial_eval([3], atr_run=tmp_path / "run")
    assert [run.label for run in result.runs] == ["3", "ATR"]
    assert (tmp_path / "run" / "curve.html").exists()


def test_stats(model_paths, tmp_path):
    """Test statistics against a relevance summary and human class sets"""
    config = _config(model_paths["perframe2d"], tmp_path, filter_predictions=False, target_class=0, mode="lrp")
    pipeline = RelevancePipeline(config)
    run = pipeline.run_relevance()
    human = tmp_path / "human.json"
    human.write_text(json.dumps({"temporal": [0], "static": [2]}))
    stats = pipeline.run_stats(run.summary_path, human)
    assert stats["classes"] == 3
    assert stats["k"] == 1
    assert stats["pearson"] is None
    assert stats["temporal_overlap"] == 100.0
    assert stats["static_overlap"] == 0.0
    written = json.loads((tmp_path / "stats.json").read_text())
    assert written["k"] == 1
    assert written["pearson"] is None
