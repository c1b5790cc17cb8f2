"""
Test the kinematic surrogate driver that labels tests Safe or Unsafe.
"""

import math

import numpy as np
import pytest

from scissor.core.config import DriverConfig
from scissor.core.errors import DomainError
from scissor.schemas import Label, RoadSegment, TestCase
from scissor.services.simulation_service import DRIVER_PROFILES, simulation_service


@pytest.mark.parametrize("radius, mu, expected", [
    (10.0, 1.0, 9.9045),
    (40.0, 1.0, 19.809),
    (20.0, 0.8, 12.528),
])
def test_safe_speed(radius, mu, expected):
    assert simulation_service.safe_speed(radius, mu) == pytest.approx(expected, abs=1e-3)


def test_safe_speed_scales_with_root_radius():
    assert simulation_service.safe_speed(40.0, 1.0) == pytest.approx(2 * simulation_service.safe_speed(10.0, 1.0))


@pytest.mark.parametrize("radius, mu", [(0.0, 0.8), (-5.0, 0.8), (10.0, 0.0)])
def test_safe_speed_domain(radius, mu):
    with pytest.raises(DomainError):
        simulation_service.safe_speed(radius, mu)


def test_unknown_driver_profile():
    with pytest.raises(DomainError):
        simulation_service.driver_profile("formula-one")


def test_straight_road_is_safe_for_any_driver():
    test = TestCase(id="straight", segments=(RoadSegment.straight(120.0), RoadSegment.straight(80.0)))
    for driver in DRIVER_PROFILES.values():
        result = simulation_service.simulate(test, driver)
        assert result.label is Label.SAFE
        assert result.obe_segments == ()


def test_honest_driver_never_leaves_the_lane(default_tests):
    driver = DriverConfig(aggression=1.0, perception_noise=0.0, mu_assumed=0.8, v_max=30.0)
    assert not any(simulation_service.simulate(t, driver).obe_segments for t in default_tests[:200])


def test_aggressive_driver_leaves_a_tight_turn():
    driver = DriverConfig(aggression=2.0, perception_noise=0.0, mu_assumed=0.8, v_max=30.0, a_dec=1000.0)
    test = TestCase(id="tight", segments=(RoadSegment.straight(200.0), RoadSegment.left(90.0, 10.0)))
    result = simulation_service.simulate(test, driver)
    assert result.label is Label.UNSAFE
    assert result.obe_segments == (1,)
    physical = math.sqrt(0.8 * 10.0 * 9.81)
    on_turn = [v for s, v in result.speed_profile if s >= 200.0]
    assert on_turn == pytest.approx([2 * physical] * len(on_turn))


def test_speed_profile_limits(default_tests):
    driver = DRIVER_PROFILES["moderate"]
    for test in default_tests[:50]:
        result = simulation_service.simulate(test, driver)
        v = np.asarray(result.speeds)
        s = np.asarray(result.positions)
        assert v.min() >= 0.0 and v.max() <= driver.v_max + 1e-9
        dv2 = np.diff(v ** 2)
        ds = np.diff(s)
        assert np.all(dv2 <= 2 * driver.a_acc * ds + 1e-9)
        assert np.all(-dv2 <= 2 * driver.a_dec * ds + 1e-9)
        assert result.sim_duration > 0
        assert result.wall_cost == pytest.approx(driver.overhead_s + result.sim_duration)


def test_simulation_is_deterministic(default_tests):
    driver = DRIVER_PROFILES["moderate"]
    for test in default_tests[:20]:
        assert simulation_service.simulate(test, driver) == simulation_service.simulate(test, driver)


def test_unsafe_is_monotone_in_aggression(default_tests):
    calm = DriverConfig(aggression=1.5, perception_noise=0.0, v_max=12.0)
    wild = DriverConfig(aggression=2.0, perception_noise=0.0, v_max=12.0)
    for test in default_tests[:200]:
        if simulation_service.simulate(test, calm).label is Label.UNSAFE:
            assert simulation_service.simulate(test, wild).label is Label.UNSAFE


def test_wider_turn_never_creates_its_own_obe():
    driver = DriverConfig(aggression=1.5, perception_noise=0.0, v_max=12.0)
    for radius in (8.0, 14.0, 20.0, 26.0, 32.0, 40.0):
        tight = TestCase(id="r", segments=(RoadSegment.straight(150.0), RoadSegment.left(60.0, radius)))
        wide = TestCase(id="r", segments=(RoadSegment.straight(150.0), RoadSegment.left(60.0, radius + 5.0)))
        if 1 not in simulation_service.simulate(tight, driver).obe_segments:
            assert 1 not in simulation_service.simulate(wide, driver).obe_segments


def test_unsafe_fraction_grows_with_aggression(default_tests):
    fractions = []
    for name in ("cautious", "moderate", "reckless"):
        labeled = simulation_service.label_batch(default_tests, DRIVER_PROFILES[name])
        fractions.append(sum(t.is_unsafe for t in labeled) / len(labeled))
    assert 0.0 < fractions[0] < fractions[1] < fractions[2]
    assert fractions[2] >= 2 * fractions[0]


def test_cautious_driver_fails_only_on_misjudged_tight_turns(default_tests):
    driver = DRIVER_PROFILES["cautious"]
    tight = driver.v_max ** 2 / (0.8 * driver.g)
    failures = 0
    for test in default_tests:
        perceived = simulation_service.perceived_radii(test, driver)
        for i in simulation_service.simulate(test, driver).obe_segments:
            failures += 1
            assert test.segments[i].radius < tight
            assert perceived[i] * driver.mu_assumed > test.segments[i].radius * 0.8
    assert failures > 0
    honest = driver.model_copy(update={"perception_noise": 0.0})
    assert not any(simulation_service.simulate(t, honest).obe_segments for t in default_tests[:200])


def test_moderate_label_follows_the_turn_radius():
    driver = DRIVER_PROFILES["moderate"]
    for radius, unsafe in ((8.0, True), (15.0, True), (25.0, False), (40.0, False)):
        test = TestCase(id=f"r{radius:g}", segments=(RoadSegment.straight(150.0), RoadSegment.left(60.0, radius)))
        assert simulation_service.simulate(test, driver).label.is_unsafe is unsafe, radius


def test_safe_tests_cost_under_a_minute(default_tests):
    labeled = simulation_service.label_batch(default_tests, DRIVER_PROFILES["moderate"])
    costs = [t.wall_cost for t in labeled if not t.is_unsafe]
    assert costs
    assert 15.0 <= float(np.mean(costs)) <= 60.0


def test_empty_batch():
    assert simulation_service.label_batch([], DRIVER_PROFILES["moderate"]) == []


def test_labeled_corpus_round_trip(tmp_path, moderate_labeled):
    path = tmp_path / "labeled.json"
    driver = DRIVER_PROFILES["moderate"]
    simulation_service.dump_labeled(moderate_labeled[:25], driver, path)
    labeled, corpus = simulation_service.load_labeled(path)
    assert labeled == moderate_labeled[:25]
    assert corpus.provenance == "moderate"
    assert corpus.driver == driver
