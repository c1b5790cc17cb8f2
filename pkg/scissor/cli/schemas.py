from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

from scissor.core.config import (
    ExperimentConfig,
    FeatureConfig,
    GeneratorConfig,
    LearnConfig,
    RealTimeConfig,
    StrictModel,
)
from scissor.schemas import (
    CrossEvalReport,
    EvalReport,
    FeatureRanking,
    RealTimeRun,
    RepetitionAggregate,
    StudyRow,
)

REPORT_SCHEMA_VERSION = 1

Stage = Literal["generate", "label", "extract", "train", "rank", "fix", "reach", "realtime"]

STAGE_ORDER: Tuple[str, ...] = ("generate", "label", "extract", "train", "rank", "fix", "reach", "realtime")


# Common
class ResponseModel(BaseModel):
    status: str
    timestamp: str


class ErrorResponse(ResponseModel):
    status: Literal["error"] = "error"
    error: dict


# Manifests
class ArtifactDigest(BaseModel):
    path: str = Field(..., description="Relative to the manifest's directory")
    sha256: str


class RunManifest(BaseModel):
    schema_version: int = 1
    tool_version: str
    command: str
    seed: int
    timestamp: str
    config: dict
    inputs: List[ArtifactDigest] = Field(default_factory=list)
    outputs: List[ArtifactDigest] = Field(default_factory=list)


# Pipeline configuration
class PipelineInputs(StrictModel):
    """Existing artifacts a stage reads instead of the ones earlier stages would write."""

    tests: Optional[str] = None
    labeled: Optional[str] = None
    features: Optional[str] = None
    model: Optional[str] = None


class RankConfig(StrictModel):
    methods: Tuple[Literal["infogain", "correlation"], ...] = ("infogain", "correlation")


class PipelineConfig(StrictModel):
    stages: Tuple[Stage, ...] = STAGE_ORDER
    n_tests: int = Field(500, ge=1)
    driver: str = "moderate"
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    learn: LearnConfig = Field(default_factory=LearnConfig)
    rank: RankConfig = Field(default_factory=RankConfig)
    experiments: ExperimentConfig = Field(default_factory=ExperimentConfig)
    realtime: RealTimeConfig = Field(default_factory=RealTimeConfig)
    realtime_modes: Tuple[Literal["baseline", "pretrained", "adaptive"], ...] = (
        "baseline", "pretrained", "adaptive")
    inputs: PipelineInputs = Field(default_factory=PipelineInputs)


# Report files
class SelectionReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    kind: Literal["selection"] = "selection"
    experiment: Literal["fix", "reach"]
    aggregates: List[RepetitionAggregate]


class RealTimeReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    kind: Literal["realtime"] = "realtime"
    runs: List[RealTimeRun]


class EvalFile(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    kind: Literal["eval"] = "eval"
    model_provenance: str
    data_provenance: str
    report: EvalReport
    metrics: Dict[str, float]
    by_provenance: List[CrossEvalReport] = Field(default_factory=list)


class RankingFile(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    kind: Literal["ranking"] = "ranking"
    ranking: FeatureRanking


class StudyReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    kind: Literal["study"] = "study"
    rows: List[StudyRow]
