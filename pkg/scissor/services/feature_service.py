import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from scissor.core.config import FeatureConfig
from scissor.core.errors import SchemaMismatch
from scissor.schemas import (
    Dataset,
    FeatureSchema,
    FeatureSet,
    FullRoadFeatures,
    Label,
    LabeledTest,
    LabeledVector,
    RoadSegment,
    SegmentFeatures,
    SegmentKind,
    TestCase,
)
from scissor.services.road_service import road_service

logger = logging.getLogger(__name__)

META_COLUMNS = ("label", "test_id", "segment_index", "provenance")

Features = Union[FullRoadFeatures, SegmentFeatures]


class FeatureService:
    """Feature extraction for whole roads and for single segments, before execution."""

    def __init__(self, config: Optional[FeatureConfig] = None):
        self.config = config or FeatureConfig()

    def extract_full_road(self, test: TestCase, config: Optional[FeatureConfig] = None) -> FullRoadFeatures:
        """
        Global descriptors of a road.

        Turn statistics cover turns only; a road without turns gets 0 for every
        angle and radius statistic. Standard deviations are population deviations.
        """
        config = config or self.config
        turns = [s for s in test.segments if s.is_turn]
        if config.absolute_angles:
            angles = np.array([abs(s.angle) for s in turns], dtype=float)
        else:
            angles = np.array([s.angle for s in turns], dtype=float)
        radii = np.array([s.radius for s in turns], dtype=float)

        def stats(values: np.ndarray):
            if values.size == 0:
                return 0.0, 0.0, 0.0, 0.0, 0.0
            return (float(np.median(values)), float(np.std(values)), float(values.max()),
                    float(values.min()), float(values.mean()))

        median_a, std_a, max_a, min_a, mean_a = stats(angles)
        median_r, std_r, max_r, min_r, mean_r = stats(radii)
        return FullRoadFeatures(
            direct_distance=road_service.direct_distance(test),
            length=road_service.path_length(test),
            num_l_turns=sum(1 for s in turns if s.kind is SegmentKind.LEFT_TURN),
            num_r_turns=sum(1 for s in turns if s.kind is SegmentKind.RIGHT_TURN),
            num_straight=len(test.segments) - len(turns),
            total_angle=float(sum(abs(s.angle) for s in turns)),
            median_angle=median_a, std_angle=std_a, max_angle=max_a, min_angle=min_a, mean_angle=mean_a,
            median_radius=median_r, std_radius=std_r, max_radius=max_r, min_radius=min_r,
            mean_radius=mean_r,
        )

    def _own(self, segment: RoadSegment, prefix: str = "") -> dict:
        return {
            f"{prefix}right_turn": segment.kind is SegmentKind.RIGHT_TURN,
            f"{prefix}left_turn": segment.kind is SegmentKind.LEFT_TURN,
            f"{prefix}straight": segment.kind is SegmentKind.STRAIGHT,
            f"{prefix}angle": segment.angle,
            f"{prefix}radius": segment.radius,
            f"{prefix}length": segment.length,
            f"{prefix}direct_distance": road_service.segment_direct_distance(segment),
        }

    def extract_segments(self, test: TestCase) -> List[SegmentFeatures]:
        """One vector per segment, in path order, with its neighbours' attributes."""
        segments = test.segments
        out = []
        for i, segment in enumerate(segments):
            fields = {"first": i == 0, "last": i == len(segments) - 1}
            fields.update(self._own(segment))
            if i > 0:
                fields.update(self._own(segments[i - 1], "prev_"))
            if i < len(segments) - 1:
                fields.update(self._own(segments[i + 1], "next_"))
            out.append(SegmentFeatures(**fields))
        return out

    def vectorize(self, features: Features, label: Label, test_id: str,
                  segment_index: Optional[int] = None) -> LabeledVector:
        feature_set: FeatureSet = "full" if isinstance(features, FullRoadFeatures) else "segment"
        if (feature_set == "segment") != (segment_index is not None):
            raise SchemaMismatch("segment vectors need a segment index, road vectors must not have one")
        return LabeledVector(feature_set=feature_set, values=features.values(), label=label,
                             test_id=test_id, segment_index=segment_index)

    def vectors_for(self, labeled: LabeledTest, feature_set: FeatureSet) -> List[LabeledVector]:
        if feature_set == "full":
            return [self.vectorize(self.extract_full_road(labeled.test), labeled.label, labeled.test_id)]
        # A segment is unsafe exactly when the OBE happened on it.
        obe = set(labeled.obe_segments)
        return [self.vectorize(f, Label.from_flag(i in obe), labeled.test_id, i)
                for i, f in enumerate(self.extract_segments(labeled.test))]

    def build_dataset(self, labeled: Sequence[LabeledTest], feature_set: FeatureSet,
                      provenance: str = "unknown") -> Dataset:
        vectors = [v for t in labeled for v in self.vectors_for(t, feature_set)]
        dataset = Dataset.from_vectors(vectors, FeatureSchema.for_set(feature_set), provenance)
        logger.info(f"Built {feature_set} dataset '{provenance}': {len(dataset)} rows, "
                    f"{dataset.n_unsafe} unsafe")
        return dataset

    def to_frame(self, dataset: Dataset) -> pd.DataFrame:
        frame = pd.DataFrame(dataset.X, columns=list(dataset.feature_names))
        for name, kind in zip(dataset.feature_names, dataset.schema.kinds):
            if kind.value == "boolean":
                frame[name] = frame[name].astype(np.int64)
        frame["label"] = [Label.from_flag(bool(v)).value for v in dataset.y]
        frame["test_id"] = list(dataset.test_ids)
        frame["segment_index"] = dataset.segment_index
        frame["provenance"] = list(dataset.row_provenance)
        return frame

    def write_csv(self, dataset: Dataset, path: Path) -> None:
        self.to_frame(dataset).to_csv(path, index=False, lineterminator="\n")

    def read_csv(self, path: Path, provenance: Optional[str] = None) -> Dataset:
        frame = pd.read_csv(path, float_precision="round_trip", dtype={"test_id": str, "provenance": str})
        names = tuple(c for c in frame.columns if c not in META_COLUMNS)
        feature_set: FeatureSet = "full" if names == FullRoadFeatures.columns() else "segment"
        schema = FeatureSchema.for_set(feature_set)
        if names != schema.names or any(c not in frame.columns for c in META_COLUMNS[:3]):
            raise SchemaMismatch(f"{path} does not carry the full-road or segment columns",
                                 path=str(path))
        tag = provenance or Path(path).stem
        if provenance is None and "provenance" in frame.columns:
            rows = tuple(frame["provenance"].astype(str))
        else:
            rows = tuple(tag for _ in range(len(frame)))
        tags = list(dict.fromkeys(rows)) or [tag]
        return Dataset(schema=schema,
                       X=frame[list(names)].to_numpy(dtype=float),
                       y=(frame["label"] == Label.UNSAFE.value).to_numpy(dtype=np.int64),
                       test_ids=tuple(frame["test_id"].astype(str)),
                       segment_index=frame["segment_index"].to_numpy(dtype=np.int64),
                       row_provenance=rows,
                       provenance="+".join(tags))

    def write_jsonl(self, dataset: Dataset, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for vector in dataset.vectors():
                fh.write(vector.model_dump_json() + "\n")


feature_service = FeatureService()
