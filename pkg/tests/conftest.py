"""Shared fixtures: seeded fixture models, clips and small hand-built graphs"""
import itertools
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import pytest

from backend.fixtures import generate_fixture_models, fixture_models
from backend.model_graph import build_model
from backend.models import ClipTensor, ModelGraph
from backend.schemas import ManifestSpec


@pytest.fixture(scope="session")
def models() -> Dict[str, ModelGraph]:
    return fixture_models(seed=0)


@pytest.fixture(scope="session")
def model_paths(tmp_path_factory):
    return generate_fixture_models(tmp_path_factory.mktemp("fixtures"), seed=0)


def random_clip(model: ModelGraph, seed: int, label: Optional[int] = None) -> ClipTensor:
    """Clip with values in [-1, 1] (the default input bounds)"""
    rng = np.random.default_rng(seed)
    shape = (model.expected_frames, model.channels, model.height, model.width)
    return ClipTensor(data=rng.uniform(-1.0, 1.0, size=shape).astype(np.float32),
                      clip_id=f"clip_{seed:04d}", label=label)


def make_model(nodes: List[Dict[str, Any]], weights: Mapping[str, Mapping[str, np.ndarray]],
               frames: int, channels: int, classes: int, height: int = 1, width: int = 1,
               branches: Optional[Dict[str, Any]] = None, name: str = "handmade") -> ModelGraph:
    spec = ManifestSpec.model_validate({
        "name": name,
        "num_classes": classes,
        "expected_frames": frames,
        "input": {"channels": channels, "height": height, "width": width},
        "nodes": nodes,
        "branches": branches,
    })
    arrays = {node: {key: np.asarray(value, dtype=np.float32) for key, value in blobs.items()}
              for node, blobs in weights.items()}
    return build_model(spec, arrays)


def naive_conv3d(x: np.ndarray, weight: np.ndarray, padding=None, stride=(1, 1)) -> np.ndarray:
    """Nested-loop convolution in time (cross-correlation in space) with "same" temporal padding"""
    if weight.ndim == 4:
        weight = weight[:, :, None]
    n, c, h, w = x.shape
    o, _, kt, kh, kw = weight.shape
    pt = (kt - 1) // 2
    if padding is None:
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        ho, wo = (h - 1) // stride[0] + 1, (w - 1) // stride[1] + 1
    else:
        ph, pw = padding
        ho, wo = (h + 2 * ph - kh) // stride[0] + 1, (w + 2 * pw - kw) // stride[1] + 1
    out = np.zeros((n, o, ho, wo))
    for t, oc, i, j in itertools.product(range(n), range(o), range(ho), range(wo)):
        total = 0.0
        for ic, dt, di, dj in itertools.product(range(c), range(kt), range(kh), range(kw)):
            tt, ii, jj = t - dt + (kt - 1 - pt), i * stride[0] + di - ph, j * stride[1] + dj - pw
            if 0 <= tt < n and 0 <= ii < h and 0 <= jj < w:
                total += float(x[tt, ic, ii, jj]) * float(weight[oc, ic, dt, di, dj])
        out[t, oc, i, j] = total
    return out
