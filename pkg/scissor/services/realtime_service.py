import logging
from typing import List, Optional

from scissor.core.config import DriverConfig, GeneratorConfig, LearnConfig, RealTimeConfig
from scissor.core.errors import DomainError
from scissor.core.seeding import derive_seed
from scissor.schemas import (
    Classifier,
    EvalReport,
    Label,
    LabeledTest,
    LabelRecord,
    RealTimeRun,
    RealTimeStep,
    TimeLedger,
)
from scissor.services.feature_service import feature_service
from scissor.services.generation_service import generation_service
from scissor.services.learning_service import learning_service
from scissor.services.simulation_service import simulation_service

logger = logging.getLogger(__name__)


class _Clock:
    """Simulated wall clock; an activity is only started when it fits in the budget."""

    def __init__(self, budget_s: float):
        self.budget_s = budget_s
        self.ledger = TimeLedger()

    def fits(self, seconds: float) -> bool:
        return self.ledger.total + seconds <= self.budget_s

    def spend(self, activity: str, seconds: float) -> None:
        self.ledger = self.ledger.model_copy(update={activity: getattr(self.ledger, activity) + seconds})


class RealTimeService:

    def _retrain(self, executed: List[LabeledTest], learn: LearnConfig, seed: int,
                 previous: Optional[Classifier]) -> Classifier:
        data = feature_service.build_dataset(executed, learn.feature_set, "realtime")
        if learn.rebalance:
            data = learning_service.oversample(data, seed)
        return learning_service.train(learn.kind, data, learn.hyper, seed, warm_start=previous)

    def _training_rows(self, executed: List[LabeledTest], learn: LearnConfig) -> int:
        if learn.feature_set == "full":
            unsafe = sum(1 for t in executed if t.is_unsafe)
            rows = len(executed)
            if learn.rebalance:
                rows = 2 * max(unsafe, rows - unsafe)
            return rows
        segments = sum(len(t.test.segments) for t in executed)
        unsafe = sum(len(t.obe_segments) for t in executed)
        return 2 * max(unsafe, segments - unsafe) if learn.rebalance else segments

    def run_realtime(self, config: RealTimeConfig, generator: GeneratorConfig, driver: DriverConfig,
                     learn: LearnConfig, seed: int, model: Optional[Classifier] = None,
                     oracle: bool = False) -> RealTimeRun:
        """
        Generate, filter and execute tests until the simulated budget runs out.

        Args:
            config: Mode, budget and cost model
            generator: Road generator settings; its seed is replaced by one derived from ``seed``
            driver: Surrogate driver used for execution and post-mortem labels
            learn: Model family and features the adaptive mode retrains
            seed: Master seed of the run
            model: Frozen model for the pre-trained mode
            oracle: Pre-trained mode predicts the true label instead of using ``model``

        Returns:
            The time ledger, counts, confusion and the post-mortem labels of rejected tests
        """
        mode = config.mode
        cost = config.cost
        if mode == "pretrained" and model is None and not oracle:
            raise DomainError("the pre-trained mode needs a model")
        generator = generator.model_copy(update={"seed": derive_seed(seed, "realtime-generate")})

        clock = _Clock(config.budget_s)
        current = model if mode == "pretrained" else None
        executed: List[LabeledTest] = []
        steps: List[RealTimeStep] = []
        post_mortem: List[LabelRecord] = []
        confusion = EvalReport()
        retrains = 0
        rejected = 0

        for index in range(config.max_tests):
            if not clock.fits(cost.generation_s):
                break
            test, _ = generation_service.generate_one(generator, index)
            clock.spend("generation", cost.generation_s)
            truth = simulation_service.label(test, driver)

            bootstrap = mode == "adaptive" and index < cost.bootstrap_tests
            predicted: Optional[Label] = None
            if mode == "pretrained" or (mode == "adaptive" and not bootstrap and current is not None):
                if not clock.fits(cost.prediction_s):
                    break
                clock.spend("prediction", cost.prediction_s)
                if oracle and mode == "pretrained":
                    predicted = truth.label
                else:
                    predicted = Label.from_flag(bool(learning_service.flag_tests(current, [test])[0]))

            run_it = predicted is None or predicted.is_unsafe
            if run_it and not clock.fits(truth.wall_cost):
                break
            # Unpredicted executions count as selected, i.e. predicted Unsafe.
            confusion = confusion.record(run_it, truth.is_unsafe)
            steps.append(RealTimeStep(index=index, test_id=test.id, predicted=predicted, executed=run_it,
                                      label=truth.label, bootstrap=bootstrap))
            if not run_it:
                rejected += 1
                post_mortem.append(truth.to_record())
                continue

            clock.spend("execution_unsafe" if truth.is_unsafe else "execution_safe", truth.wall_cost)
            executed.append(truth)

            if mode != "adaptive" or index + 1 < cost.bootstrap_tests:
                continue
            unsafe = sum(1 for t in executed if t.is_unsafe)
            if unsafe in (0, len(executed)) or len(executed) % cost.retrain_every:
                continue
            retrain_s = cost.retrain_s(self._training_rows(executed, learn))
            if not clock.fits(retrain_s):
                break
            clock.spend("retraining", retrain_s)
            current = self._retrain(executed, learn, derive_seed(seed, "retrain", retrains), current)
            retrains += 1

        executed_unsafe = sum(1 for t in executed if t.is_unsafe)
        result = RealTimeRun(mode=mode, budget_s=config.budget_s, seed=seed, ledger=clock.ledger,
                             executed_unsafe=executed_unsafe, executed_safe=len(executed) - executed_unsafe,
                             rejected=rejected, confusion=confusion, retrains=retrains, steps=steps,
                             post_mortem=post_mortem)
        logger.info(f"Real-time {mode}: {len(steps)} tests, {executed_unsafe} unsafe executed, "
                    f"{rejected} rejected, {retrains} retrains, {clock.ledger.total:.0f}/{config.budget_s:.0f} s")
        return result


realtime_service = RealTimeService()
