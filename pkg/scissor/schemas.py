import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from scissor.core.config import Hyperparameters
from scissor.core.errors import SchemaMismatch

# --- Road model ---

MIN_TURN_ANGLE = 15.0
MAX_TURN_ANGLE = 120.0
MIN_TURN_RADIUS = 2.0
MAX_TURN_RADIUS = 47.0
MIN_PATH_LENGTH = 50.0


class SegmentKind(str, Enum):
    STRAIGHT = "straight"
    LEFT_TURN = "left_turn"
    RIGHT_TURN = "right_turn"


class Label(str, Enum):
    SAFE = "safe"
    UNSAFE = "unsafe"

    @property
    def is_unsafe(self) -> bool:
        return self is Label.UNSAFE

    @classmethod
    def from_flag(cls, unsafe: bool) -> "Label":
        return cls.UNSAFE if unsafe else cls.SAFE


def arc_length(radius: float, angle: float) -> float:
    """Arc length of a turn of ``angle`` degrees on ``radius`` meters."""
    return radius * abs(angle) * math.pi / 180.0


class RoadSegment(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    kind: SegmentKind
    angle: float = Field(0.0, alias="angle_deg", description="Signed degrees, left positive")
    radius: float = Field(0.0, alias="radius_m", description="Turn radius, 0 for straights")
    length: float = Field(..., alias="length_m", description="Meters, arc length for turns")
    friction: float = Field(0.8, gt=0, le=2, description="Static friction coefficient")

    @model_validator(mode="after")
    def _check_geometry(self):
        if self.kind is SegmentKind.STRAIGHT:
            if self.angle != 0 or self.radius != 0 or not self.length > 0:
                raise ValueError("straight segments need angle 0, radius 0 and length > 0")
            return self
        if not MIN_TURN_ANGLE <= abs(self.angle) <= MAX_TURN_ANGLE:
            raise ValueError(f"turn angle {self.angle} outside ±[15, 120] degrees")
        if not MIN_TURN_RADIUS <= self.radius <= MAX_TURN_RADIUS:
            raise ValueError(f"turn radius {self.radius} outside [2, 47] meters")
        if self.kind is SegmentKind.LEFT_TURN and self.angle <= 0:
            raise ValueError("left turns have a positive angle")
        if self.kind is SegmentKind.RIGHT_TURN and self.angle >= 0:
            raise ValueError("right turns have a negative angle")
        expected = arc_length(self.radius, self.angle)
        if not math.isclose(self.length, expected, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"turn length {self.length} differs from arc length {expected}")
        return self

    @classmethod
    def straight(cls, length: float, friction: float = 0.8) -> "RoadSegment":
        return cls(kind=SegmentKind.STRAIGHT, length=length, friction=friction)

    @classmethod
    def turn(cls, angle: float, radius: float, friction: float = 0.8) -> "RoadSegment":
        """Build a turn from a signed angle; the kind follows the sign."""
        kind = SegmentKind.LEFT_TURN if angle > 0 else SegmentKind.RIGHT_TURN
        return cls(kind=kind, angle=angle, radius=radius,
                   length=arc_length(radius, angle), friction=friction)

    @classmethod
    def left(cls, angle: float, radius: float, friction: float = 0.8) -> "RoadSegment":
        return cls.turn(abs(angle), radius, friction)

    @classmethod
    def right(cls, angle: float, radius: float, friction: float = 0.8) -> "RoadSegment":
        return cls.turn(-abs(angle), radius, friction)

    @property
    def is_turn(self) -> bool:
        return self.kind is not SegmentKind.STRAIGHT

    def flipped(self) -> "RoadSegment":
        if not self.is_turn:
            return self
        return RoadSegment.turn(-self.angle, self.radius, self.friction)


class TestCase(BaseModel):
    __test__ = False  # not a pytest class

    model_config = ConfigDict(frozen=True)

    id: str
    segments: Tuple[RoadSegment, ...] = Field(..., min_length=2)

    @model_validator(mode="after")
    def _check_length(self):
        total = sum(s.length for s in self.segments)
        if total < MIN_PATH_LENGTH:
            raise ValueError(f"path length {total:.3f} m is below {MIN_PATH_LENGTH} m")
        return self

    @property
    def turn_count(self) -> int:
        return sum(1 for s in self.segments if s.is_turn)


class LabeledTest(BaseModel):
    model_config = ConfigDict(frozen=True)

    test: TestCase
    label: Label
    obe_segments: Tuple[int, ...] = ()
    sim_duration: float = Field(..., gt=0)
    wall_cost: float = Field(..., ge=0)

    @model_validator(mode="after")
    def _check_label(self):
        if self.label.is_unsafe != bool(self.obe_segments):
            raise ValueError("label must be unsafe exactly when OBE segments are present")
        return self

    @property
    def test_id(self) -> str:
        return self.test.id

    @property
    def is_unsafe(self) -> bool:
        return self.label.is_unsafe

    def to_record(self) -> "LabelRecord":
        return LabelRecord(test_id=self.test.id, label=self.label,
                           obe_segments=self.obe_segments,
                           sim_duration_s=self.sim_duration, wall_cost_s=self.wall_cost)


class LabelRecord(BaseModel):
    """Wire form of a label, joined to its test by id."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    test_id: str
    label: Label
    obe_segments: Tuple[int, ...] = ()
    sim_duration_s: float
    wall_cost_s: float


# --- Surrogate simulation ---

class SimResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: Label
    obe_segments: Tuple[int, ...]
    positions: Tuple[float, ...] = Field(..., description="Grid positions along the path, meters")
    speeds: Tuple[float, ...] = Field(..., description="Driven speed at each grid position, m/s")
    sim_duration: float
    wall_cost: float

    @property
    def speed_profile(self) -> List[Tuple[float, float]]:
        return list(zip(self.positions, self.speeds))


# --- Features ---

FeatureSet = Literal["full", "segment"]


class FeatureKind(str, Enum):
    NUMERIC = "numeric"
    BOOLEAN = "boolean"


class FullRoadFeatures(BaseModel):
    model_config = ConfigDict(frozen=True)

    direct_distance: float
    length: float
    num_l_turns: int
    num_r_turns: int
    num_straight: int
    total_angle: float
    median_angle: float
    std_angle: float
    max_angle: float
    min_angle: float
    mean_angle: float
    median_radius: float
    std_radius: float
    max_radius: float
    min_radius: float
    mean_radius: float

    @classmethod
    def columns(cls) -> Tuple[str, ...]:
        return tuple(cls.model_fields)

    @classmethod
    def kinds(cls) -> Tuple[FeatureKind, ...]:
        return tuple(FeatureKind.NUMERIC for _ in cls.model_fields)

    def values(self) -> Tuple[float, ...]:
        return tuple(float(getattr(self, name)) for name in self.columns())


_SEGMENT_BOOLEANS = {
    "first", "last", "right_turn", "left_turn", "straight",
    "prev_right_turn", "prev_left_turn", "prev_straight",
    "next_right_turn", "next_left_turn", "next_straight",
}


class SegmentFeatures(BaseModel):
    model_config = ConfigDict(frozen=True)

    first: bool
    last: bool
    right_turn: bool
    left_turn: bool
    straight: bool
    angle: float
    radius: float
    length: float
    direct_distance: float
    prev_right_turn: bool = False
    prev_left_turn: bool = False
    prev_straight: bool = False
    prev_angle: float = 0.0
    prev_radius: float = 0.0
    prev_length: float = 0.0
    prev_direct_distance: float = 0.0
    next_right_turn: bool = False
    next_left_turn: bool = False
    next_straight: bool = False
    next_angle: float = 0.0
    next_radius: float = 0.0
    next_length: float = 0.0
    next_direct_distance: float = 0.0

    @classmethod
    def columns(cls) -> Tuple[str, ...]:
        return tuple(cls.model_fields)

    @classmethod
    def kinds(cls) -> Tuple[FeatureKind, ...]:
        return tuple(FeatureKind.BOOLEAN if name in _SEGMENT_BOOLEANS else FeatureKind.NUMERIC
                     for name in cls.model_fields)

    def values(self) -> Tuple[float, ...]:
        return tuple(float(getattr(self, name)) for name in self.columns())


class FeatureSchema(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature_set: FeatureSet
    names: Tuple[str, ...]
    kinds: Tuple[FeatureKind, ...]

    @classmethod
    def for_set(cls, feature_set: FeatureSet) -> "FeatureSchema":
        model = FullRoadFeatures if feature_set == "full" else SegmentFeatures
        return cls(feature_set=feature_set, names=model.columns(), kinds=model.kinds())

    def require_same(self, other: "FeatureSchema") -> None:
        if self.feature_set != other.feature_set or self.names != other.names:
            raise SchemaMismatch(
                f"feature schema {self.feature_set}/{len(self.names)} columns does not match "
                f"{other.feature_set}/{len(other.names)} columns")

    def select(self, names: Sequence[str]) -> "FeatureSchema":
        index = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise SchemaMismatch(f"unknown feature columns: {missing}")
        return FeatureSchema(feature_set=self.feature_set, names=tuple(names),
                             kinds=tuple(self.kinds[index[n]] for n in names))


class LabeledVector(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature_set: FeatureSet
    values: Tuple[float, ...]
    label: Label
    test_id: str
    segment_index: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rectangular labeled feature table; ``y`` is 1 for Unsafe rows."""

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    test_ids: Tuple[str, ...]
    segment_index: np.ndarray
    row_provenance: Tuple[str, ...]
    provenance: str = "unknown"

    def __post_init__(self):
        n = len(self.y)
        if self.X.ndim != 2 or self.X.shape != (n, len(self.schema.names)):
            raise SchemaMismatch(f"feature matrix shape {self.X.shape} does not fit "
                                 f"{n} rows x {len(self.schema.names)} columns")
        if len(self.test_ids) != n or len(self.segment_index) != n or len(self.row_provenance) != n:
            raise SchemaMismatch("row metadata length does not match the number of rows")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def feature_names(self) -> Tuple[str, ...]:
        return self.schema.names

    @property
    def n_unsafe(self) -> int:
        return int(self.y.sum())

    @property
    def n_safe(self) -> int:
        return len(self.y) - self.n_unsafe

    @property
    def unsafe_fraction(self) -> float:
        return self.n_unsafe / len(self.y) if len(self.y) else 0.0

    @classmethod
    def from_vectors(cls, vectors: Sequence[LabeledVector], schema: FeatureSchema,
                     provenance: str = "unknown") -> "Dataset":
        for v in vectors:
            if v.feature_set != schema.feature_set or len(v.values) != len(schema.names):
                raise SchemaMismatch(f"a {v.feature_set} vector cannot join a "
                                     f"{schema.feature_set} dataset")
        X = np.array([v.values for v in vectors], dtype=float).reshape(len(vectors), len(schema.names))
        y = np.array([1 if v.label.is_unsafe else 0 for v in vectors], dtype=np.int64)
        seg = np.array([-1 if v.segment_index is None else v.segment_index for v in vectors],
                       dtype=np.int64)
        return cls(schema=schema, X=X, y=y, test_ids=tuple(v.test_id for v in vectors),
                   segment_index=seg, row_provenance=tuple(provenance for _ in vectors),
                   provenance=provenance)

    def take(self, index: Sequence[int]) -> "Dataset":
        idx = np.asarray(index, dtype=np.int64)
        return Dataset(schema=self.schema, X=self.X[idx], y=self.y[idx],
                       test_ids=tuple(self.test_ids[i] for i in idx),
                       segment_index=self.segment_index[idx],
                       row_provenance=tuple(self.row_provenance[i] for i in idx),
                       provenance=self.provenance)

    def select(self, names: Sequence[str]) -> "Dataset":
        """Restrict the table to ``names``, in that order."""
        schema = self.schema.select(names)
        cols = [self.schema.names.index(n) for n in names]
        return Dataset(schema=schema, X=self.X[:, cols], y=self.y, test_ids=self.test_ids,
                       segment_index=self.segment_index, row_provenance=self.row_provenance,
                       provenance=self.provenance)

    def only_provenance(self, tag: str) -> "Dataset":
        idx = [i for i, p in enumerate(self.row_provenance) if p == tag]
        part = self.take(idx)
        return Dataset(schema=part.schema, X=part.X, y=part.y, test_ids=part.test_ids,
                       segment_index=part.segment_index, row_provenance=part.row_provenance,
                       provenance=tag)

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise SchemaMismatch("cannot combine zero datasets")
        schema = parts[0].schema
        for p in parts[1:]:
            schema.require_same(p.schema)
        tags: List[str] = []
        for p in parts:
            if p.provenance not in tags:
                tags.append(p.provenance)
        return cls(schema=schema,
                   X=np.vstack([p.X for p in parts]),
                   y=np.concatenate([p.y for p in parts]),
                   test_ids=tuple(t for p in parts for t in p.test_ids),
                   segment_index=np.concatenate([p.segment_index for p in parts]),
                   row_provenance=tuple(r for p in parts for r in p.row_provenance),
                   provenance="+".join(tags))

    def vectors(self) -> Iterator[LabeledVector]:
        for i in range(len(self)):
            seg = int(self.segment_index[i])
            yield LabeledVector(feature_set=self.schema.feature_set,
                                values=tuple(float(v) for v in self.X[i]),
                                label=Label.from_flag(bool(self.y[i])),
                                test_id=self.test_ids[i],
                                segment_index=None if seg < 0 else seg)


# --- Learning ---

class ClassifierKind(str, Enum):
    LOGISTIC = "logistic"
    DECISION_TREE = "decision_tree"
    RANDOM_FOREST = "random_forest"
    NAIVE_BAYES = "naive_bayes"
    MAJORITY = "majority"


class LogisticParams(BaseModel):
    model: Literal["logistic"] = "logistic"
    weights: List[float]
    bias: float
    mean: List[float]
    scale: List[float]
    iterations: int
    converged: bool


class TreeNode(BaseModel):
    # Leaves have feature == -1; feature indexes the classifier's active columns.
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    p_unsafe: float
    n: int


class TreeParams(BaseModel):
    model: Literal["decision_tree"] = "decision_tree"
    nodes: List[TreeNode]


class ForestParams(BaseModel):
    model: Literal["random_forest"] = "random_forest"
    trees: List[TreeParams]
    bag_seeds: List[int]


class NaiveBayesParams(BaseModel):
    model: Literal["naive_bayes"] = "naive_bayes"
    log_prior: List[float] = Field(..., description="[safe, unsafe]")
    numeric: List[int]
    boolean: List[int]
    mean: List[List[float]]
    var: List[List[float]]
    p_true: List[List[float]]


class MajorityParams(BaseModel):
    model: Literal["majority"] = "majority"
    p_unsafe: float


ClassifierParams = Union[LogisticParams, TreeParams, ForestParams, NaiveBayesParams, MajorityParams]


class Classifier(BaseModel):
    schema_version: int = 1
    kind: ClassifierKind
    feature_set: FeatureSet
    feature_names: List[str]
    feature_kinds: List[FeatureKind]
    active: List[int] = Field(..., description="Columns the model was fitted on")
    provenance: str = "unknown"
    seed: int = 0
    hyper: Hyperparameters = Field(default_factory=Hyperparameters)
    params: ClassifierParams = Field(..., discriminator="model")


class EvalReport(BaseModel):
    """Confusion counts with Unsafe as the positive class."""

    model_config = ConfigDict(frozen=True)

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @staticmethod
    def _ratio(num: int, den: int) -> float:
        return num / den if den else 0.0

    @staticmethod
    def _f1(p: float, r: float) -> float:
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @computed_field
    @property
    def accuracy(self) -> float:
        return self._ratio(self.tp + self.tn, self.total)

    @computed_field
    @property
    def precision_unsafe(self) -> float:
        return self._ratio(self.tp, self.tp + self.fp)

    @computed_field
    @property
    def recall_unsafe(self) -> float:
        return self._ratio(self.tp, self.tp + self.fn)

    @computed_field
    @property
    def f1_unsafe(self) -> float:
        return self._f1(self.precision_unsafe, self.recall_unsafe)

    @computed_field
    @property
    def precision_safe(self) -> float:
        return self._ratio(self.tn, self.tn + self.fn)

    @computed_field
    @property
    def recall_safe(self) -> float:
        return self._ratio(self.tn, self.tn + self.fp)

    @computed_field
    @property
    def f1_safe(self) -> float:
        return self._f1(self.precision_safe, self.recall_safe)

    def metrics(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(tp=self.tp + other.tp, fp=self.fp + other.fp,
                          tn=self.tn + other.tn, fn=self.fn + other.fn)

    def record(self, predicted_unsafe: bool, actually_unsafe: bool) -> "EvalReport":
        return self + EvalReport(tp=int(predicted_unsafe and actually_unsafe),
                                 fp=int(predicted_unsafe and not actually_unsafe),
                                 tn=int(not predicted_unsafe and not actually_unsafe),
                                 fn=int(not predicted_unsafe and actually_unsafe))


METRIC_NAMES = ("accuracy", "precision_unsafe", "recall_unsafe", "f1_unsafe",
                "precision_safe", "recall_safe", "f1_safe")


class CrossValidationReport(BaseModel):
    k: int
    kind: ClassifierKind
    mean: Dict[str, float] = Field(..., description="Metrics macro-averaged over folds")
    pooled: EvalReport = Field(..., description="Confusion counts summed over folds")
    folds: List[EvalReport]


class FeatureScore(BaseModel):
    feature: str
    score: float
    selected: bool


class FeatureRanking(BaseModel):
    method: Literal["infogain", "correlation"]
    threshold: float
    provenance: str
    scores: List[FeatureScore]

    def selected_names(self) -> List[str]:
        return [s.feature for s in self.scores if s.selected]


class StudyRow(BaseModel):
    provenance: str
    feature_set: FeatureSet
    kind: ClassifierKind
    protocol: str = Field(..., description="'split-0.8' style or 'kfold-10'")
    train_rows: int
    test_rows: int
    metrics: Dict[str, float]
    confusion: EvalReport


# --- Experiments ---

class TestPool(BaseModel):
    __test__ = False  # not a pytest class

    model_config = ConfigDict(frozen=True)

    rows: Tuple[LabeledTest, ...]
    requested: Tuple[float, float] = Field(..., description="(safe_fraction, unsafe_fraction)")

    @property
    def n_unsafe(self) -> int:
        return sum(1 for r in self.rows if r.is_unsafe)

    @property
    def n_safe(self) -> int:
        return len(self.rows) - self.n_unsafe

    @property
    def composition(self) -> Tuple[float, float]:
        n = len(self.rows)
        return (self.n_safe / n, self.n_unsafe / n) if n else (0.0, 0.0)

    @property
    def name(self) -> str:
        safe, unsafe = self.requested
        return f"({round(safe * 100)}/{round(unsafe * 100)})"


class SelectionStep(BaseModel):
    test_id: str
    predicted: Optional[Label] = None
    p_unsafe: Optional[float] = None
    executed: bool
    revealed: Optional[Label] = None
    wall_cost: float = 0.0


class SelectionRun(BaseModel):
    experiment: Literal["fix", "reach"]
    strategy: str
    pool: str
    target: int = Field(..., description="S for FIX, N for REACH")
    seed: int
    steps: List[SelectionStep]
    drawn: int
    executed: int
    skipped: int
    executed_unsafe: int
    executed_safe: int
    time_safe: float
    time_unsafe: float
    confusion: EvalReport
    exhausted: bool = False

    @computed_field
    @property
    def unsafe_ratio(self) -> float:
        return self.executed_unsafe / self.executed if self.executed else 0.0

    def summary(self) -> Dict[str, float]:
        return {
            "drawn": float(self.drawn),
            "executed": float(self.executed),
            "skipped": float(self.skipped),
            "executed_unsafe": float(self.executed_unsafe),
            "executed_safe": float(self.executed_safe),
            "unsafe_ratio": self.unsafe_ratio,
            "time_safe": self.time_safe,
            "time_unsafe": self.time_unsafe,
        }


class RepetitionAggregate(BaseModel):
    experiment: Literal["fix", "reach"]
    strategy: str
    pool: str
    target: int
    reps: int
    master_seed: int
    mean: Dict[str, float]
    std: Dict[str, float]
    cumulative: EvalReport
    exhausted_runs: int
    runs: List[SelectionRun]


class TimeLedger(BaseModel):
    generation: float = 0.0
    prediction: float = 0.0
    execution_safe: float = 0.0
    execution_unsafe: float = 0.0
    retraining: float = 0.0

    @property
    def total(self) -> float:
        return (self.generation + self.prediction + self.execution_safe
                + self.execution_unsafe + self.retraining)

    def fractions(self) -> Dict[str, float]:
        total = self.total
        names = ("generation", "prediction", "execution_safe", "execution_unsafe", "retraining")
        if not total:
            return {n: 0.0 for n in names}
        return {n: getattr(self, n) / total for n in names}


class RealTimeStep(BaseModel):
    index: int
    test_id: str
    predicted: Optional[Label] = None
    executed: bool
    label: Label
    bootstrap: bool = False


class RealTimeRun(BaseModel):
    mode: Literal["baseline", "pretrained", "adaptive"]
    budget_s: float
    seed: int
    ledger: TimeLedger
    executed_unsafe: int
    executed_safe: int
    rejected: int
    confusion: EvalReport
    retrains: int
    steps: List[RealTimeStep] = Field(default_factory=list)
    post_mortem: List[LabelRecord] = Field(default_factory=list)

    @computed_field
    @property
    def time_fractions(self) -> Dict[str, float]:
        return self.ledger.fractions()


class CrossEvalReport(BaseModel):
    model_provenance: str
    data_provenance: str
    report: EvalReport
