"""
Kinematic lane-keeping surrogate.

The driver plans a speed profile from the turn caps it believes in, the physics checks
each turn against the true cap, and a turn where the planned speed exceeds the true cap
is an out-of-bound episode (OBE).
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from pydantic import BaseModel, ValidationError

from scissor.core.config import DriverConfig
from scissor.core.errors import DomainError, InvalidTestCase
from scissor.core.seeding import stream
from scissor.schemas import Label, LabeledTest, LabelRecord, SimResult, TestCase

logger = logging.getLogger(__name__)

# Cautious/moderate/reckless share one friction belief above what the road can give
# (0.7 / 0.8 of the true grip), so even the cautious driver overshoots a turn it
# perceives wide enough. Only turns below v_max^2 / (mu g) can be overshot at all,
# which keeps labels tied to the radius; the reckless driver also drives faster.
# The planner overrates the friction instead and never scales its caps.
DRIVER_PROFILES: Dict[str, DriverConfig] = {
    "cautious": DriverConfig(name="cautious", aggression=1.0, v_max=12.0),
    "moderate": DriverConfig(name="moderate", aggression=1.5, v_max=12.0),
    "reckless": DriverConfig(name="reckless", aggression=2.0, v_max=15.0),
    "planner": DriverConfig(name="planner", aggression=1.0, mu_assumed=0.9, v_max=12.0),
}


class LabeledCorpus(BaseModel):
    """labeled.json: the tests, the driver that labeled them, and one record per test."""

    schema_version: int = 1
    provenance: str
    driver: DriverConfig
    tests: List[TestCase]
    labels: List[LabelRecord]


class SimulationService:

    def driver_profile(self, name: str) -> DriverConfig:
        try:
            return DRIVER_PROFILES[name]
        except KeyError:
            raise DomainError(f"unknown driver profile '{name}'; "
                              f"choose from {sorted(DRIVER_PROFILES)}")

    def safe_speed(self, radius: float, mu: float, g: float = 9.81) -> float:
        """Highest cornering speed before the tyres lose grip, v = sqrt(mu * r * g)."""
        if radius <= 0:
            raise DomainError(f"radius must be positive, got {radius}; straights have no cap")
        if mu <= 0:
            raise DomainError(f"friction must be positive, got {mu}")
        return math.sqrt(mu * radius * g)

    def perceived_radii(self, test: TestCase, driver: DriverConfig) -> List[float]:
        """Radius the driver believes each turn has (0 for straights)."""
        radii = []
        for i, segment in enumerate(test.segments):
            if not segment.is_turn:
                radii.append(0.0)
                continue
            eta = 0.0
            if driver.perception_noise > 0:
                rng = stream(driver.noise_seed, "perception", test.id, i)
                eta = float(rng.uniform(-driver.perception_noise, driver.perception_noise))
            radii.append(segment.radius * (1.0 + eta))
        return radii

    def _grid(self, test: TestCase, caps: Sequence[float], grid_m: float) -> Tuple[List[float], List[float], List[Tuple[int, int]]]:
        positions: List[float] = []
        point_caps: List[float] = []
        spans: List[Tuple[int, int]] = []
        offset = 0.0
        for segment, cap in zip(test.segments, caps):
            n = max(1, math.ceil(segment.length / grid_m))
            start = len(positions) - 1 if positions else 0
            for j in range(n + 1):
                if j == 0 and positions:
                    # Shared boundary point: both segments' caps apply.
                    point_caps[-1] = min(point_caps[-1], cap)
                    continue
                positions.append(offset + segment.length * j / n)
                point_caps.append(cap)
            spans.append((start, len(positions) - 1))
            offset += segment.length
        return positions, point_caps, spans

    def speed_profile(self, positions: Sequence[float], caps: Sequence[float],
                      a_acc: float, a_dec: float) -> List[float]:
        """Two-pass acceleration-limited profile starting from rest."""
        v = [0.0] * len(positions)
        for k in range(len(positions) - 1):
            ds = positions[k + 1] - positions[k]
            v[k + 1] = min(caps[k + 1], math.sqrt(v[k] * v[k] + 2.0 * a_acc * ds))
        for k in range(len(positions) - 2, -1, -1):
            ds = positions[k + 1] - positions[k]
            v[k] = min(v[k], math.sqrt(v[k + 1] * v[k + 1] + 2.0 * a_dec * ds))
        return v

    def simulate(self, test: TestCase, driver: DriverConfig) -> SimResult:
        """
        Drive a test with the surrogate and report OBEs.

        Args:
            test: The road to drive
            driver: Driver style, friction belief and noise stream

        Returns:
            Label, OBE segment indices, the speed profile, driving time and modeled cost
        """
        perceived = self.perceived_radii(test, driver)
        caps = []
        for segment, r_hat in zip(test.segments, perceived):
            if segment.is_turn:
                believed = self.safe_speed(r_hat, driver.mu_assumed, driver.g)
                caps.append(min(driver.v_max, driver.aggression * believed))
            else:
                caps.append(driver.v_max)

        positions, point_caps, spans = self._grid(test, caps, driver.grid_m)
        speeds = self.speed_profile(positions, point_caps, driver.a_acc, driver.a_dec)

        obe = []
        for i, (segment, (lo, hi)) in enumerate(zip(test.segments, spans)):
            if not segment.is_turn:
                continue
            physical = self.safe_speed(segment.radius, segment.friction, driver.g)
            if max(speeds[lo:hi + 1]) > physical + 1e-9:
                obe.append(i)

        duration = 0.0
        for k in range(len(positions) - 1):
            duration += 2.0 * (positions[k + 1] - positions[k]) / (speeds[k] + speeds[k + 1])

        return SimResult(label=Label.from_flag(bool(obe)), obe_segments=tuple(obe),
                         positions=tuple(positions), speeds=tuple(speeds),
                         sim_duration=duration, wall_cost=driver.overhead_s + duration)

    def label(self, test: TestCase, driver: DriverConfig) -> LabeledTest:
        result = self.simulate(test, driver)
        return LabeledTest(test=test, label=result.label, obe_segments=result.obe_segments,
                           sim_duration=result.sim_duration, wall_cost=result.wall_cost)

    def label_batch(self, tests: Sequence[TestCase], driver: DriverConfig) -> List[LabeledTest]:
        labeled = [self.label(t, driver) for t in tests]
        if labeled:
            unsafe = sum(1 for t in labeled if t.is_unsafe)
            logger.info(f"Labeled {len(labeled)} tests with driver '{driver.name}': "
                        f"{unsafe} unsafe ({unsafe / len(labeled):.1%})")
        return labeled

    def dump_labeled(self, labeled: Sequence[LabeledTest], driver: DriverConfig, path: Path) -> None:
        corpus = LabeledCorpus(provenance=driver.name, driver=driver,
                               tests=[t.test for t in labeled],
                               labels=[t.to_record() for t in labeled])
        Path(path).write_text(corpus.model_dump_json(indent=1, by_alias=True) + "\n", encoding="utf-8")

    def load_labeled(self, path: Path) -> Tuple[List[LabeledTest], LabeledCorpus]:
        try:
            corpus = LabeledCorpus.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except ValidationError as e:
            raise InvalidTestCase(f"invalid labeled corpus {path}: {e}", path=str(path))
        by_id = {t.id: t for t in corpus.tests}
        labeled = []
        for record in corpus.labels:
            if record.test_id not in by_id:
                raise InvalidTestCase(f"label for unknown test {record.test_id}", path=str(path))
            labeled.append(LabeledTest(test=by_id[record.test_id], label=record.label,
                                       obe_segments=record.obe_segments,
                                       sim_duration=record.sim_duration_s,
                                       wall_cost=record.wall_cost_s))
        return labeled, corpus


simulation_service = SimulationService()
