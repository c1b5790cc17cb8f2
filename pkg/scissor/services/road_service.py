"""
Road geometry for virtual-road test cases.

Coordinates: the path starts at the origin heading +x; positive angles turn left.
Every segment is traced from its analytic start pose, so endpoints do not depend on
the sampling step.
"""

import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.spatial import cKDTree

from scissor.core.errors import InvalidTestCase
from scissor.schemas import RoadSegment, TestCase

logger = logging.getLogger(__name__)

Pose = Tuple[float, float, float]  # x, y, heading in radians
Path_ = Union[TestCase, Sequence[RoadSegment]]


def _segments(path: Path_) -> Sequence[RoadSegment]:
    return path.segments if isinstance(path, TestCase) else path


class RoadService:
    """Pure geometry over segment lists; every method is safe to call concurrently."""

    def __init__(self, clearance_m: float = 8.0):
        self.clearance_m = clearance_m

    def end_pose(self, segment: RoadSegment, pose: Pose) -> Pose:
        x, y, h = pose
        if not segment.is_turn:
            return (x + segment.length * math.cos(h), y + segment.length * math.sin(h), h)
        theta = math.radians(segment.angle)
        s = 1.0 if theta > 0 else -1.0
        r = segment.radius
        cx, cy = x - s * r * math.sin(h), y + s * r * math.cos(h)
        h_end = h + theta
        return (cx + s * r * math.sin(h_end), cy - s * r * math.cos(h_end), h_end)

    def sample_segment(self, segment: RoadSegment, pose: Pose, step: float) -> np.ndarray:
        """Points from the segment start to its end, at most ``step`` meters apart."""
        n = max(1, math.ceil(segment.length / step))
        t = np.linspace(0.0, 1.0, n + 1)
        x, y, h = pose
        if not segment.is_turn:
            d = t * segment.length
            return np.column_stack((x + d * math.cos(h), y + d * math.sin(h)))
        theta = math.radians(segment.angle)
        s = 1.0 if theta > 0 else -1.0
        r = segment.radius
        cx, cy = x - s * r * math.sin(h), y + s * r * math.cos(h)
        heading = h + t * theta
        points = np.column_stack((cx + s * r * np.sin(heading), cy - s * r * np.cos(heading)))
        # Pin the analytic endpoint so refinement never moves it.
        end = self.end_pose(segment, pose)
        points[-1] = (end[0], end[1])
        return points

    def segment_polylines(self, path: Path_, step: float = 1.0) -> List[np.ndarray]:
        if step <= 0:
            raise ValueError("step must be positive")
        pose: Pose = (0.0, 0.0, 0.0)
        pieces = []
        for segment in _segments(path):
            pieces.append(self.sample_segment(segment, pose, step))
            pose = self.end_pose(segment, pose)
        return pieces

    def polyline(self, path: Path_, step: float = 1.0) -> np.ndarray:
        """
        Sample the driving path.

        Args:
            path: A TestCase or a plain list of segments
            step: Maximum spacing between consecutive points, meters

        Returns:
            An (n, 2) array of points starting at the origin
        """
        pieces = self.segment_polylines(path, step)
        return np.vstack([pieces[0]] + [p[1:] for p in pieces[1:]])

    def poses(self, path: Path_) -> List[Pose]:
        """Start pose of every segment plus the final pose."""
        pose: Pose = (0.0, 0.0, 0.0)
        out = [pose]
        for segment in _segments(path):
            pose = self.end_pose(segment, pose)
            out.append(pose)
        return out

    def direct_distance(self, path: Path_) -> float:
        x, y, _ = self.poses(path)[-1]
        return math.hypot(x, y)

    def path_length(self, path: Path_) -> float:
        return float(sum(s.length for s in _segments(path)))

    def segment_direct_distance(self, segment: RoadSegment) -> float:
        if not segment.is_turn:
            return segment.length
        return 2.0 * segment.radius * math.sin(math.radians(abs(segment.angle)) / 2.0)

    def has_self_intersection(self, path: Path_, clearance_m: Optional[float] = None,
                              step: float = 1.0) -> bool:
        """
        Check that parts of the road far apart along the path stay apart on the ground.

        Two points more than two clearances apart along the path must be at least one
        clearance apart in the plane.
        """
        clearance = self.clearance_m if clearance_m is None else clearance_m
        pieces = self.segment_polylines(path, step)
        points = np.vstack([pieces[0]] + [p[1:] for p in pieces[1:]])
        along = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(points, axis=0).T))])
        pairs = cKDTree(points).query_pairs(r=clearance - 1e-9, output_type="ndarray")
        if len(pairs) == 0:
            return False
        gap = np.abs(along[pairs[:, 0]] - along[pairs[:, 1]])
        return bool(np.any(gap > 2.0 * clearance))

    def validate(self, test: TestCase, clearance_m: Optional[float] = None) -> TestCase:
        if self.has_self_intersection(test, clearance_m):
            raise InvalidTestCase(f"test {test.id} overlaps itself", test_id=test.id)
        return test

    def reverse(self, test: TestCase) -> TestCase:
        """Drive the same road backwards: reversed order, mirrored turn directions."""
        return TestCase(id=f"{test.id}-rev",
                        segments=tuple(s.flipped() for s in reversed(test.segments)))

    def dump_tests(self, tests: Sequence[TestCase], path: Path) -> None:
        payload = [t.model_dump(mode="json", by_alias=True) for t in tests]
        Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")

    def load_tests(self, path: Path) -> List[TestCase]:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        items = raw["tests"] if isinstance(raw, dict) else raw
        try:
            return [TestCase.model_validate(item) for item in items]
        except ValidationError as e:
            raise InvalidTestCase(f"invalid test case in {path}: {e}", path=str(path))


road_service = RoadService()
