import logging
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel

from scissor.core.config import GeneratorConfig
from scissor.core.errors import GenerationExhausted
from scissor.core.seeding import stream
from scissor.schemas import MIN_PATH_LENGTH, RoadSegment, TestCase
from scissor.services.road_service import road_service

logger = logging.getLogger(__name__)

_KINDS = ("straight", "left", "right")


class GenerationStats(BaseModel):
    tests: int = 0
    drafts: int = 0
    rejected_self_intersection: int = 0
    rejected_short: int = 0

    @property
    def rejection_rate(self) -> float:
        return self.rejected_self_intersection / self.drafts if self.drafts else 0.0

    def merge(self, other: "GenerationStats") -> "GenerationStats":
        return GenerationStats(
            tests=self.tests + other.tests,
            drafts=self.drafts + other.drafts,
            rejected_self_intersection=self.rejected_self_intersection + other.rejected_self_intersection,
            rejected_short=self.rejected_short + other.rejected_short,
        )


class GenerationService:
    """Seeded random road generator with rejection sampling."""

    def default_config(self) -> GeneratorConfig:
        return GeneratorConfig()

    def test_id(self, config: GeneratorConfig, index: int) -> str:
        return f"s{config.seed:x}-{index:05d}"

    def _draft(self, config: GeneratorConfig, rng: np.random.Generator) -> List[RoadSegment]:
        count = int(rng.integers(config.segments_min, config.segments_max + 1))
        probs = [config.p_straight, config.p_left, config.p_right]
        segments = []
        for _ in range(count):
            kind = _KINDS[int(rng.choice(3, p=probs))]
            if kind == "straight":
                length = float(rng.uniform(*config.straight_len_range))
                segments.append(RoadSegment.straight(length, config.friction))
                continue
            radius = float(rng.uniform(*config.turn_radius_range))
            angle = float(rng.uniform(*config.turn_angle_range))
            if kind == "left":
                segments.append(RoadSegment.left(angle, radius, config.friction))
            else:
                segments.append(RoadSegment.right(angle, radius, config.friction))
        return segments

    def generate_one(self, config: GeneratorConfig, index: int) -> Tuple[TestCase, GenerationStats]:
        """
        Produce the ``index``-th test of the stream defined by ``config.seed``.

        Each index owns an independent random stream, so a batch of five tests is a
        prefix of a batch of ten.

        Raises:
            GenerationExhausted: when ``max_retries`` drafts in a row were rejected
        """
        rng = stream(config.seed, "generate", index)
        stats = GenerationStats()
        min_length = max(config.min_length_m, MIN_PATH_LENGTH)
        for _ in range(config.max_retries):
            stats.drafts += 1
            segments = self._draft(config, rng)
            if road_service.path_length(segments) < min_length:
                stats.rejected_short += 1
                continue
            if road_service.has_self_intersection(segments, config.clearance_m):
                stats.rejected_self_intersection += 1
                logger.debug(f"Draft for test {index} overlaps itself, resampling")
                continue
            stats.tests = 1
            return TestCase(id=self.test_id(config, index), segments=tuple(segments)), stats
        raise GenerationExhausted(
            f"test {index} needed more than {config.max_retries} drafts; the generator "
            f"configuration is over-constrained", index=index)

    def generate_with_stats(self, config: GeneratorConfig, n: int) -> Tuple[List[TestCase], GenerationStats]:
        if n < 1:
            raise ValueError("n must be at least 1")
        tests: List[TestCase] = []
        stats = GenerationStats()
        for index in range(n):
            test, one = self.generate_one(config, index)
            tests.append(test)
            stats = stats.merge(one)
        logger.info(f"Generated {n} tests from {stats.drafts} drafts "
                    f"({stats.rejection_rate:.1%} rejected for self-intersection)")
        return tests, stats

    def generate(self, config: GeneratorConfig, n: int) -> List[TestCase]:
        tests, _ = self.generate_with_stats(config, n)
        return tests


generation_service = GenerationService()
