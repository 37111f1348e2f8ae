"""Binary tensor files (TCLP clips, TWGT weight blobs) and clip directories

Both formats share one layout: an 8-byte magic, little-endian u32 rank,
u32 dims[rank], then the row-major little-endian f32 payload.
"""
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from backend.errors import InvalidInput, IOFailure, ShapeMismatch, TensorFormatError
from backend.models import ClipTensor

logger = logging.getLogger(__name__)

CLIP_MAGIC = b"TRELCLP1"
WEIGHT_MAGIC = b"TRELWGT1"
CLIP_SUFFIX = ".tclp"
WEIGHT_SUFFIX = ".twgt"
LABELS_FILE = "labels.json"

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write through a temp file in the target directory, then rename"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def encode_tensor(array: np.ndarray, magic: bytes) -> bytes:
    array = np.asarray(array)
    if array.ndim == 0 or min(array.shape) < 1:
        raise ShapeMismatch(f"tensor dimensions must all be >= 1, got {array.shape}")
    header = np.asarray([array.ndim, *array.shape], dtype="<u4").tobytes()
    return magic + header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_tensor(payload: bytes, magic: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(payload) < len(magic) + 4 or payload[:len(magic)] != magic:
        raise TensorFormatError(f"{source}: missing {magic.decode()} header")
    offset = len(magic)
    rank = int(np.frombuffer(payload, dtype="<u4", count=1, offset=offset)[0])
    offset += 4
    if rank < 1 or len(payload) < offset + 4 * rank:
        raise TensorFormatError(f"{source}: truncated header (rank {rank})")
    dims = tuple(int(d) for d in np.frombuffer(payload, dtype="<u4", count=rank, offset=offset))
    offset += 4 * rank
    if min(dims) < 1:
        raise TensorFormatError(f"{source}: zero-sized dimension in {dims}")
    expected = int(np.prod(dims)) * 4
    if len(payload) - offset != expected:
        raise ShapeMismatch(
            f"{source}: payload holds {len(payload) - offset} bytes, shape {dims} needs {expected}")
    data = np.frombuffer(payload, dtype="<f4", offset=offset).astype(np.float32)
    return data.reshape(dims)


def write_tensor(path: PathLike, array: np.ndarray, magic: bytes) -> Path:
    return atomic_write_bytes(path, encode_tensor(array, magic))


def read_tensor(path: PathLike, magic: bytes) -> np.ndarray:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    return decode_tensor(payload, magic, str(path))


def write_weight(path: PathLike, array: np.ndarray) -> Path:
    return write_tensor(path, array, WEIGHT_MAGIC)


def read_weight(path: PathLike) -> np.ndarray:
    return read_tensor(path, WEIGHT_MAGIC)


def write_clip(path: PathLike, clip: ClipTensor) -> Path:
    return write_tensor(path, clip.data, CLIP_MAGIC)


def read_clip(path: PathLike, label: Optional[int] = None) -> ClipTensor:
    path = Path(path)
    data = read_tensor(path, CLIP_MAGIC)
    if data.ndim != 4:
        raise ShapeMismatch(f"{path}: clip tensors are [N, C, H, W], got {data.shape}")
    return ClipTensor(data=data, clip_id=path.stem, label=label)


def write_labels(directory: PathLike, labels: Dict[str, int]) -> Path:
    return atomic_write_text(Path(directory) / LABELS_FILE, json.dumps(labels, indent=2, sort_keys=True))


def read_labels(directory: PathLike) -> Dict[str, int]:
    path = Path(directory) / LABELS_FILE
    if not path.exists():
        return {}
    try:
        raw = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise TensorFormatError(f"{path}: expected an object mapping clip ids to class ids")
    labels = {}
    for clip_id, label in raw.items():
        if label is None:
            continue
        if isinstance(label, bool) or not isinstance(label, int):
            raise TensorFormatError(f"{path}: label of {clip_id!r} is not an integer class id: {label!r}")
        labels[str(clip_id)] = label
    return labels


def load_clip_dir(directory: PathLike) -> List[ClipTensor]:
    """Read every TCLP clip in ``directory`` (sorted by clip id) with its label"""
    directory = Path(directory)
    if not directory.is_dir():
        raise IOFailure(f"clip directory {directory} does not exist")
    labels = read_labels(directory)
    clips = [read_clip(path, labels.get(path.stem)) for path in sorted(directory.glob(f"*{CLIP_SUFFIX}"))]
    logger.info("Loaded %d clips from %s (%d labeled)", len(clips), directory, len(labels))
    return clips


def read_class_map(path: PathLike) -> List[str]:
    """Class names indexed by class id (a JSON array)"""
    try:
        names = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot parse class map {path}: {exc}") from exc
    if not isinstance(names, list):
        raise InvalidInput(f"class map {path} must be a JSON array of names")
    return [str(name) for name in names]
