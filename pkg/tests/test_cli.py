"""Command-line interface tests"""
import json

import numpy as np
import pytest

from backend.cli import main
from backend.errors import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME
from backend.models import RelevanceMatrix, RelevanceMode
from backend.reports import read_matrix, write_matrix


def _error(stderr):
    lines = [line for line in stderr.splitlines() if line.startswith('{"error"')]
    assert lines, stderr
    return json.loads(lines[-1])["error"]


def _spec(tmp_path, **fields):
    spec = {"generator": "static", "height": 6, "width": 6, "num_classes": 3, "count": 3}
    spec.update(fields)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


def _matrix_file(tmp_path, a, clip_id="clip_0007"):
    a = np.asarray(a, dtype=np.float64)
    matrix = RelevanceMatrix(a=a, logits=np.ones(a.shape[0]), target_class=0, clip_id=clip_id,
                             mode=RelevanceMode.LRP)
    return write_matrix(tmp_path / "matrix.json", matrix)


def test_missing_manifest(tmp_path, capsys):
    """Test a missing model manifest exits with a configuration error"""
    code = main(["relevance", "--model", str(tmp_path / "absent.json"),
                 "--synthetic", str(_spec(tmp_path)), "--out", str(tmp_path / "out")])
    assert code == EXIT_CONFIG
    assert _error(capsys.readouterr().err)["kind"] == "ManifestParseError"


def test_invalid_sigma(model_paths, tmp_path, capsys):
    """Test sigma outside (0, 1] is rejected"""
    code = main(["relevance", "--model", str(model_paths["perframe2d"]), "--synthetic", str(_spec(tmp_path)),
                 "--sigma", "1.5", "--out", str(tmp_path / "out")])
    assert code == EXIT_CONFIG
    assert _error(capsys.readouterr().err)["kind"] == "InvalidSigma"


def test_invalid_synthetic_spec(model_paths, tmp_path, capsys):
    """Test a pattern spec without a span keeps its error kind"""
    code = main(["relevance", "--model", str(model_paths["perframe2d"]),
                 "--synthetic", str(_spec(tmp_path, generator="pattern")), "--out", str(tmp_path / "out")])
    assert code == EXIT_CONFIG
    assert _error(capsys.readouterr().err)["kind"] == "InvalidSpec"


def test_window_size_zero(model_paths, tmp_path):
    """Test window sizes below 1 are usage errors"""
    with pytest.raises(SystemExit) as excinfo:
        main(["partial-eval", "--model", str(model_paths["temporal_diff_k3"]), "--synthetic", str(_spec(tmp_path)),
              "--sizes", "0", "--out", str(tmp_path / "out")])
    assert excinfo.value.code == 2


def test_workers_zero(model_paths, tmp_path):
    """Test a worker count below 1 is a usage error"""
    with pytest.raises(SystemExit) as excinfo:
        main(["inspect", "--model", str(model_paths["tiny_tam"]), "--workers", "0"])
    assert excinfo.value.code == 2


def test_relevance_command(model_paths, tmp_path, capsys):
    """Test the relevance command writes a summary and prints its headline numbers"""
    out = tmp_path / "out"
    code = main(["relevance", "--model", str(model_paths["perframe2d"]), "--synthetic", str(_spec(tmp_path)),
                 "--mode", "lrp", "--no-filter", "--target-class", "0", "--heatmaps", "--out", str(out)])
    assert code == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["videos"] == 3
    assert document["mean_avg_atr"] == 1.0
    assert (out / "summary.json").exists()
    assert (out / "clips" / "clip_0000" / "heatmap.pgm").exists()


def test_partial_eval_command(model_paths, tmp_path, capsys):
    """Test N stands for the model's frame count"""
    out = tmp_path / "out"
    code = main(["partial-eval", "--model", str(model_paths["temporal_diff_k3"]),
                 "--synthetic", str(_spec(tmp_path, generator="noise")), "--sizes", "1,3,N", "--out", str(out)])
    assert code == EXIT_OK
    points = json.loads(capsys.readouterr().out)["points"]
    assert [point["window_size"] for point in points] == ["1", "3", "8"]
    assert (out / "curve.csv").exists()


def test_eval_command(model_paths, tmp_path, capsys):
    """Test ensemble sizes are deduplicated and capped at the frame count"""
    code = main(["eval", "--model", str(model_paths["tiny_i3d"]),
                 "--synthetic", str(_spec(tmp_path, generator="noise")), "--frames-used", "1,8,N,16",
                 "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    results = json.loads(capsys.readouterr().out)["results"]
    assert [result["frames_used"] for result in results] == [1, 8]
    assert (tmp_path / "out" / "eval.csv").exists()


def test_atr_and_heatmap_commands(tmp_path, capsys):
    """Test ATR and heatmap commands on a saved matrix"""
    path = _matrix_file(tmp_path, np.eye(4))
    out = tmp_path / "out"
    assert main(["atr", "--matrix", str(path), "--out", str(out)]) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["per_frame_atr"] == [1, 1, 1, 1]
    assert document["avg_atr"] == 1.0
    assert (out / "clip_0007.report.json").exists()

    assert main(["heatmap", "--matrix", str(path), "--out", str(out), "--html"]) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["degenerate"] is False
    assert (out / "clip_0007.heatmap.pgm").exists()
    assert (out / "clip_0007.heatmap.html").exists()


def test_atr_negative_clrp_row(tmp_path, capsys):
    """Test a CLRP matrix with negative entries is a runtime failure"""
    matrix = RelevanceMatrix(a=np.array([[1.0, -0.5], [0.0, 1.0]]), logits=np.ones(2), target_class=0,
                             clip_id="neg", mode=RelevanceMode.CLRP)
    path = write_matrix(tmp_path / "neg.json", matrix)
    assert main(["atr", "--matrix", str(path), "--out", str(tmp_path)]) == EXIT_RUNTIME
    assert _error(capsys.readouterr().err)["kind"] == "NegativeRelevance"


def test_gen_synth_is_reproducible(tmp_path):
    """Test the same seed writes identical clip files"""
    for name in ("a", "b"):
        assert main(["gen-synth", "--generator", "pattern", "--span", "3", "--seed", "11",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    first = sorted((tmp_path / "a").glob("*.tclp"))
    second = sorted((tmp_path / "b").glob("*.tclp"))
    assert len(first) == 4
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()


def test_gen_fixtures_and_inspect(tmp_path, capsys):
    """Test fixture generation and model inspection"""
    assert main(["gen-fixtures", "--out", str(tmp_path), "--rate", "2"]) == EXIT_OK
    paths = json.loads(capsys.readouterr().out)
    assert "tiny_slowfast" in paths

    assert main(["inspect", "--model", paths["tiny_slowfast"]]) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["expected_frames"] == 8
    assert set(document["branches"]) == {"slow", "fast"}
    assert document["branches"]["slow"]["frame_stride"] == 2
    assert document["theoretical_temporal_rf"] == 5

    assert main(["inspect", "--model", paths["temporal_diff_k5"]]) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["theoretical_temporal_rf"] == 5
    assert len(document["temporal_layers"]) == 1


def test_merge_slowfast_command(tmp_path, capsys):
    """Test slow logits land on every rate-th fast frame and matrices are block-summed"""
    np.savetxt(tmp_path / "slow.csv", np.array([[1.0, 2.0], [3.0, 4.0]]), delimiter=",")
    np.savetxt(tmp_path / "fast.csv", np.ones((4, 2)), delimiter=",")
    matrix = _matrix_file(tmp_path, np.arange(16.0).reshape(4, 4))
    out = tmp_path / "out"
    code = main(["merge-slowfast", "--slow", str(tmp_path / "slow.csv"), "--fast", str(tmp_path / "fast.csv"),
                 "--rate", "2", "--matrix", str(matrix), "--out", str(out)])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out)["frames"] == 4
    merged = np.loadtxt(out / "merged_logits.csv", delimiter=",")
    assert merged.tolist() == [[2.0, 3.0], [1.0, 1.0], [4.0, 5.0], [1.0, 1.0]]
    assert read_matrix(out / "block_matrix.json").a.tolist() == [[10.0, 18.0], [42.0, 50.0]]


def test_merge_slowfast_rate_mismatch(tmp_path, capsys):
    """Test fast logits must hold rate times the slow frames"""
    np.savetxt(tmp_path / "slow.csv", np.ones((2, 2)), delimiter=",")
    np.savetxt(tmp_path / "fast.csv", np.ones((5, 2)), delimiter=",")
    code = main(["merge-slowfast", "--slow", str(tmp_path / "slow.csv"), "--fast", str(tmp_path / "fast.csv"),
                 "--rate", "2", "--out", str(tmp_path)])
    assert code == EXIT_RUNTIME
    assert _error(capsys.readouterr().err)["kind"] == "RateMismatch"
