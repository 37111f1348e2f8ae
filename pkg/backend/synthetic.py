"""Seeded synthetic clip generators"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from backend.errors import InvalidSpec
from backend.models import ClipTensor
from backend.schemas import SyntheticSpec, parse_schema
from backend.tensor_io import CLIP_SUFFIX, write_clip, write_labels

logger = logging.getLogger(__name__)

# Channel values: an active symbol is exactly 1.0, everything else stays below
SIGNAL_LEVEL = 1.0
NOISE_CEILING = 0.4


def parse_synthetic_spec(data: Any) -> SyntheticSpec:
    if isinstance(data, SyntheticSpec):
        return data
    return parse_schema(SyntheticSpec, data, InvalidSpec, "synthetic spec")


def class_symbols(num_classes: int, span: int) -> List[Tuple[int, ...]]:
    """Channel sequence that encodes each class over ``span`` consecutive frames

    A span of 1 gives class c the single symbol c. Longer spans start from
    0..span-1 for class 0; class c rotates that by c // 2 and reverses it
    when c is odd.
    """
    if span == 1:
        return [(c,) for c in range(num_classes)]
    base = list(range(span))
    sequences = []
    for c in range(num_classes):
        shift = (c // 2) % span
        sequence = base[shift:] + base[:shift]
        if c % 2:
            sequence.reverse()
        sequences.append(tuple(sequence))
    if len(set(sequences)) != num_classes:
        raise InvalidSpec(f"span {span} cannot encode {num_classes} distinct classes")
    return sequences


def _label(spec: SyntheticSpec, index: int) -> Optional[int]:
    return index % spec.num_classes if spec.labeling == "round_robin" else None


def _pattern_clip(spec: SyntheticSpec, rng: np.random.Generator, symbols: Tuple[int, ...]) -> np.ndarray:
    shape = (spec.frames, spec.channels, spec.height, spec.width)
    data = rng.uniform(0.0, NOISE_CEILING, size=shape)
    offset = int(rng.integers(0, spec.frames - spec.span + 1))
    for j, channel in enumerate(symbols):
        data[offset + j, channel] = SIGNAL_LEVEL
    return data


def generate_synthetic(spec: Union[SyntheticSpec, Dict[str, Any]]) -> List[ClipTensor]:
    """Deterministic clips for a seed; clip i draws from the stream (seed, i)"""
    spec = parse_synthetic_spec(spec)
    symbols: List[Tuple[int, ...]] = []
    if spec.generator == "pattern":
        symbols = class_symbols(spec.num_classes, spec.span)
        needed = max(max(sequence) for sequence in symbols) + 1
        if needed > spec.channels:
            raise InvalidSpec(f"pattern needs {needed} channels, spec has {spec.channels}")
        if spec.labeling != "round_robin":
            raise InvalidSpec("pattern clips need labels to choose their class sequence")

    clips = []
    for index in range(spec.count):
        rng = np.random.default_rng([spec.seed, index])
        label = _label(spec, index)
        if spec.generator == "static":
            frame = rng.uniform(-1.0, 1.0, size=(1, spec.channels, spec.height, spec.width))
            data = np.repeat(frame, spec.frames, axis=0)
        elif spec.generator == "noise":
            data = rng.uniform(-1.0, 1.0, size=(spec.frames, spec.channels, spec.height, spec.width))
        else:
            data = _pattern_clip(spec, rng, symbols[label])
        clips.append(ClipTensor(data=data.astype(np.float32), clip_id=f"{spec.prefix}_{index:04d}", label=label))
    logger.info("Generated %d %s clips (%d frames, seed %d)", len(clips), spec.generator, spec.frames, spec.seed)
    return clips


def write_synthetic(spec: Union[SyntheticSpec, Dict[str, Any]], directory: Union[str, Path]) -> List[Path]:
    """Write generated clips as TCLP files plus labels.json"""
    directory = Path(directory)
    clips = generate_synthetic(spec)
    paths = [write_clip(directory / f"{clip.clip_id}{CLIP_SUFFIX}", clip) for clip in clips]
    write_labels(directory, {clip.clip_id: clip.label for clip in clips if clip.label is not None})
    logger.info("Wrote %d clips to %s", len(paths), directory)
    return paths
