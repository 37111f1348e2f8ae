"""Pydantic schemas for manifests, run configuration and report documents"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, model_validator

from backend.errors import ConfigError
from backend.models import INPUT, MAIN_BRANCH, LayerKind, RelevanceMode
from config.settings import DEFAULT_MODE, DEFAULT_SEED, DEFAULT_SIGMA, DEFAULT_WORKERS, OUTPUT_DIR

SchemaT = TypeVar("SchemaT", bound=BaseModel)


def parse_schema(schema: Type[SchemaT], data: Any, error: Type[ConfigError], source: str = "") -> SchemaT:
    """Validate ``data`` against ``schema``, reporting failures as ``error``"""
    try:
        return schema.model_validate(data)
    except ValidationError as exc:
        prefix = f"{source}: " if source else ""
        raise error(f"{prefix}{exc}") from exc


# ===== Model manifest =====
class NormalizationSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    low: List[float]
    high: List[float]


class InputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    channels: PositiveInt
    height: PositiveInt
    width: PositiveInt
    normalization: Optional[NormalizationSpec] = None


class NodeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    kind: LayerKind
    params: Dict[str, Any] = Field(default_factory=dict)
    inputs: List[str] = Field(default_factory=lambda: [INPUT])
    weights: Dict[str, str] = Field(default_factory=dict)
    branch: str = MAIN_BRANCH


class BranchSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    frame_stride: PositiveInt = 1


class ManifestSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    num_classes: PositiveInt
    expected_frames: PositiveInt
    input: InputSpec
    nodes: List[NodeSpec] = Field(min_length=1)
    branches: Optional[Dict[str, BranchSpec]] = None


# ===== Synthetic data =====
class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    generator: Literal["static", "pattern", "noise"]
    frames: PositiveInt = 8
    channels: PositiveInt = 3
    height: PositiveInt = 8
    width: PositiveInt = 8
    num_classes: PositiveInt = 2
    span: Optional[PositiveInt] = None
    labeling: Literal["round_robin", "none"] = "round_robin"
    count: PositiveInt = 4
    seed: int = 0
    prefix: str = "clip"

    @model_validator(mode="after")
    def check_span(self) -> "SyntheticSpec":
        if self.generator == "pattern":
            if self.span is None:
                raise ValueError("pattern generator needs a span")
            if self.span > self.frames:
                raise ValueError(f"span {self.span} exceeds {self.frames} frames")
        return self


# ===== Run configuration =====
class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: Path
    clips: Optional[Path] = None
    synthetic: Optional[SyntheticSpec] = None
    class_map: Optional[Path] = None
    sigma: float = Field(DEFAULT_SIGMA, gt=0.0, le=1.0)
    mode: RelevanceMode = RelevanceMode(DEFAULT_MODE)
    rules: Optional[Path] = None
    out: Path = Path(OUTPUT_DIR)
    workers: int = Field(DEFAULT_WORKERS, ge=1)
    seed: int = DEFAULT_SEED
    heatmaps: bool = False
    html: bool = False
    filter_predictions: bool = True
    clrp_clamp: Literal["pixel", "frame"] = "pixel"
    target_class: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def check_clip_source(self) -> "RunConfig":
        if (self.clips is None) == (self.synthetic is None):
            raise ValueError("exactly one clip source (clips directory or synthetic spec) is required")
        return self


class HumanClassSets(BaseModel):
    """Class ids annotated by people as temporal or static"""
    model_config = ConfigDict(extra="forbid")

    temporal: List[int]
    static: List[int]


# ===== Report documents =====
class _Document(BaseModel):
    model_config = ConfigDict(populate_by_name=True)


class ATRReportDoc(_Document):
    clip_id: str
    class_id: int = Field(alias="class")
    class_name: Optional[str] = None
    sigma: float
    per_frame_atr: List[int]
    weights: List[float]
    avg_atr: Optional[float]
    max_atr: int
    relative_avg_atr: Optional[float] = None
    relative_max_atr: Optional[float] = None
    flags: List[str] = Field(default_factory=list)


class ClassSummaryDoc(_Document):
    class_id: int = Field(alias="class")
    class_name: Optional[str] = None
    mean_avg_atr: float
    std_avg_atr: float
    mean_max_atr: float
    count: int


class DatasetSummaryDoc(_Document):
    mean_avg_atr: float
    mean_max_atr: float
    video_count: int
    per_class: List[ClassSummaryDoc]


class RelevanceMatrixDoc(_Document):
    clip_id: str
    class_id: int = Field(alias="class")
    mode: RelevanceMode
    logits: List[float]
    a: List[List[float]]
