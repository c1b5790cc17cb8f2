"""
Shared fixtures: small generated corpora built once per session, plus factories for
hand-made datasets and pools.
"""

from typing import Optional, Sequence

import numpy as np
import pytest

from scissor.core.config import GeneratorConfig
from scissor.schemas import (
    Dataset,
    FeatureKind,
    FeatureSchema,
    Label,
    LabeledTest,
    RoadSegment,
    TestCase,
    TestPool,
)
from scissor.services.feature_service import feature_service
from scissor.services.generation_service import generation_service
from scissor.services.simulation_service import DRIVER_PROFILES, simulation_service

# Short roads keep roughly a third of the moderate driver's tests safe, so every
# standard pool composition can be drawn from a few hundred tests.
LAB_GENERATOR = GeneratorConfig(seed=7, segments_max=8)
HOLDOUT_GENERATOR = GeneratorConfig(seed=8, segments_max=8)


@pytest.fixture(scope="session")
def default_tests():
    return generation_service.generate(GeneratorConfig(seed=2024), 500)


@pytest.fixture(scope="session")
def lab_tests():
    return generation_service.generate(LAB_GENERATOR, 600)


@pytest.fixture(scope="session")
def moderate_labeled(lab_tests):
    return simulation_service.label_batch(lab_tests, DRIVER_PROFILES["moderate"])


@pytest.fixture(scope="session")
def holdout_labeled():
    tests = generation_service.generate(HOLDOUT_GENERATOR, 600)
    return simulation_service.label_batch(tests, DRIVER_PROFILES["moderate"])


@pytest.fixture(scope="session")
def moderate_full(moderate_labeled):
    return feature_service.build_dataset(moderate_labeled, "full", "moderate")


@pytest.fixture(scope="session")
def moderate_segments(moderate_labeled):
    return feature_service.build_dataset(moderate_labeled, "segment", "moderate")


def _road(test_id: str) -> TestCase:
    return TestCase(id=test_id, segments=(RoadSegment.straight(60.0), RoadSegment.left(45.0, 20.0)))


@pytest.fixture
def make_labeled():
    """Factory for labeled tests whose label is set by hand rather than simulated."""

    def build(n_safe: int, n_unsafe: int, safe_cost: float = 20.0, unsafe_cost: float = 30.0):
        rows = [LabeledTest(test=_road(f"s{i:05d}"), label=Label.SAFE, sim_duration=safe_cost - 5.0,
                            wall_cost=safe_cost) for i in range(n_safe)]
        rows += [LabeledTest(test=_road(f"u{i:05d}"), label=Label.UNSAFE, obe_segments=(1,),
                             sim_duration=unsafe_cost - 5.0, wall_cost=unsafe_cost) for i in range(n_unsafe)]
        return rows

    return build


@pytest.fixture
def make_pool(make_labeled):
    def build(n_safe: int, n_unsafe: int) -> TestPool:
        n = n_safe + n_unsafe
        return TestPool(rows=tuple(make_labeled(n_safe, n_unsafe)), requested=(n_safe / n, n_unsafe / n))

    return build


@pytest.fixture
def toy_dataset():
    """Factory for a Dataset over arbitrary columns; ``y`` is 1 for Unsafe rows."""

    def build(X, y, names: Optional[Sequence[str]] = None, kinds: Optional[Sequence[FeatureKind]] = None,
              provenance: str = "toy") -> Dataset:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        names = tuple(names or (f"x{i}" for i in range(X.shape[1])))
        kinds = tuple(kinds or (FeatureKind.NUMERIC for _ in names))
        schema = FeatureSchema(feature_set="full", names=names, kinds=kinds)
        return Dataset(schema=schema, X=X, y=y, test_ids=tuple(f"r{i:04d}" for i in range(len(y))),
                       segment_index=np.full(len(y), -1, dtype=np.int64),
                       row_provenance=tuple(provenance for _ in range(len(y))), provenance=provenance)

    return build
