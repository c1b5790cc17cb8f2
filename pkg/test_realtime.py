"""
Test the budgeted generate, filter and execute loop in its three modes.
"""

import pytest

from scissor.core.config import GeneratorConfig, LearnConfig, RealTimeConfig
from scissor.core.errors import DomainError
from scissor.services.learning_service import learning_service
from scissor.services.realtime_service import realtime_service
from scissor.services.simulation_service import DRIVER_PROFILES

GENERATOR = GeneratorConfig(segments_max=8)
DRIVER = DRIVER_PROFILES["moderate"]
LEARN = LearnConfig()


def run(mode, budget, seed=1, **kwargs):
    config = RealTimeConfig(mode=mode, budget_s=budget)
    return realtime_service.run_realtime(config, GENERATOR, DRIVER, LEARN, seed, **kwargs)


@pytest.fixture(scope="module")
def pretrained_model(moderate_full):
    return learning_service.train("logistic", learning_service.oversample(moderate_full, seed=3))


def test_baseline_executes_everything_and_never_predicts():
    result = run("baseline", 3600.0)
    assert result.ledger.prediction == result.ledger.retraining == 0.0
    assert result.rejected == 0 and not result.post_mortem
    assert all(step.executed and step.predicted is None for step in result.steps)
    assert result.confusion.fn == result.confusion.tn == 0


def test_ledger_stays_within_the_budget():
    for mode in ("baseline", "adaptive"):
        result = run(mode, 2000.0, seed=4)
        assert result.ledger.total <= 2000.0 + 1e-9
        assert sum(result.time_fractions.values()) == pytest.approx(1.0)


def test_adaptive_bootstraps_before_predicting():
    result = run("adaptive", 5000.0, seed=2)
    assert len(result.steps) > 60
    assert all(step.executed and step.bootstrap for step in result.steps[:60])
    assert all(step.predicted is None for step in result.steps[:60])
    assert not any(step.bootstrap for step in result.steps[60:])
    assert result.retrains > 0
    assert result.ledger.retraining > 0.0


def test_oracle_filter_beats_the_baseline():
    for seed in range(10):
        baseline = run("baseline", 3600.0, seed=seed)
        oracle = run("pretrained", 3600.0, seed=seed, oracle=True)
        assert oracle.executed_unsafe > baseline.executed_unsafe
        assert oracle.executed_safe == 0


def test_pretrained_without_a_model_is_refused():
    with pytest.raises(DomainError):
        run("pretrained", 1000.0)


def test_pretrained_confusion_covers_every_step(pretrained_model):
    result = run("pretrained", 3600.0, seed=5, model=pretrained_model)
    confusion = result.confusion
    assert confusion.total == len(result.steps)
    assert all(step.predicted is not None for step in result.steps)
    truly_unsafe = sum(1 for step in result.steps if step.label.is_unsafe)
    assert confusion.tp + confusion.fn == truly_unsafe
    assert confusion.tp == result.executed_unsafe


def test_rejected_tests_are_labeled_post_mortem(pretrained_model):
    result = run("pretrained", 3600.0, seed=6, model=pretrained_model)
    rejected = [step.test_id for step in result.steps if not step.executed]
    assert [record.test_id for record in result.post_mortem] == rejected
    assert result.rejected == len(rejected)
    for step, record in zip([s for s in result.steps if not s.executed], result.post_mortem):
        assert record.label is step.label


def test_run_is_reproducible():
    assert run("adaptive", 2500.0, seed=9) == run("adaptive", 2500.0, seed=9)
