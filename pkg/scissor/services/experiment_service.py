"""
Offline selection studies over labeled test pools.

A selector sees only test definitions; labels are read from the pool when a test is
"executed", and for skipped tests only to fill the confusion counts.
"""

import logging
import math
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from scissor.core.config import STANDARD_COMPOSITIONS
from scissor.core.errors import InsufficientClass, PoolExhausted
from scissor.core.seeding import derive_seed, stream
from scissor.schemas import (
    Classifier,
    CrossEvalReport,
    Dataset,
    EvalReport,
    Label,
    LabeledTest,
    RepetitionAggregate,
    SelectionRun,
    SelectionStep,
    TestPool,
)
from scissor.services.learning_service import learning_service

logger = logging.getLogger(__name__)


class Selector(Protocol):
    name: str

    def scores(self, pool: TestPool) -> Optional[np.ndarray]:
        """p(Unsafe) for every pool row, or None when the strategy has no model."""

    def flags(self, pool: TestPool) -> Optional[np.ndarray]:
        """Predicted Unsafe per pool row, or None when every draw is selected."""


class BaselineSelector:
    name = "baseline"

    def scores(self, pool: TestPool) -> Optional[np.ndarray]:
        return None

    def flags(self, pool: TestPool) -> Optional[np.ndarray]:
        return None


class OracleSelector:
    """Predicts the true label; the upper bound of any filter."""

    name = "oracle"

    def scores(self, pool: TestPool) -> Optional[np.ndarray]:
        return np.array([1.0 if r.is_unsafe else 0.0 for r in pool.rows])

    def flags(self, pool: TestPool) -> Optional[np.ndarray]:
        return np.array([r.is_unsafe for r in pool.rows], dtype=bool)


class ModelSelector:

    def __init__(self, classifier: Classifier, name: Optional[str] = None):
        self.classifier = classifier
        self.name = name or classifier.kind.value
        self._cache: Dict[Tuple[str, ...], Tuple[np.ndarray, np.ndarray]] = {}

    def _predict(self, pool: TestPool) -> Tuple[np.ndarray, np.ndarray]:
        key = tuple(r.test_id for r in pool.rows)
        if key not in self._cache:
            tests = [r.test for r in pool.rows]
            self._cache[key] = (learning_service.score_tests(self.classifier, tests),
                                learning_service.flag_tests(self.classifier, tests))
        return self._cache[key]

    def scores(self, pool: TestPool) -> Optional[np.ndarray]:
        return self._predict(pool)[0]

    def flags(self, pool: TestPool) -> Optional[np.ndarray]:
        return self._predict(pool)[1]


class ExperimentService:

    def _pool_counts(self, n_safe: int, n_unsafe: int, composition: Tuple[float, float],
                     size: Optional[int]) -> Tuple[int, int]:
        safe_f, unsafe_f = composition
        if size is not None:
            want_unsafe = int(round(unsafe_f * size))
            return size - want_unsafe, want_unsafe
        if unsafe_f == 0:
            return n_safe, 0
        if safe_f == 0:
            return 0, n_unsafe
        # Use one class entirely and the floor of the ratio of the other; keep the larger.
        options = []
        other = int(math.floor(n_safe * unsafe_f / safe_f + 1e-9))
        if other <= n_unsafe:
            options.append((n_safe, other))
        other = int(math.floor(n_unsafe * safe_f / unsafe_f + 1e-9))
        if other <= n_safe:
            options.append((other, n_unsafe))
        return max(options, key=sum)

    def build_pool(self, labeled: Sequence[LabeledTest], composition: Tuple[float, float],
                   seed: int, size: Optional[int] = None) -> TestPool:
        """
        Draw a pool with the requested (safe, unsafe) composition.

        Without ``size`` the pool is the largest one the available rows allow; with it,
        the unsafe count is the rounded share of ``size``.

        Raises:
            InsufficientClass: when a class cannot supply its share
        """
        safe_idx = [i for i, t in enumerate(labeled) if not t.is_unsafe]
        unsafe_idx = [i for i, t in enumerate(labeled) if t.is_unsafe]
        want_safe, want_unsafe = self._pool_counts(len(safe_idx), len(unsafe_idx), composition, size)
        if want_safe > len(safe_idx) or want_unsafe > len(unsafe_idx):
            raise InsufficientClass(f"pool {composition} needs {want_safe} safe and {want_unsafe} unsafe "
                                    f"tests, only {len(safe_idx)} and {len(unsafe_idx)} are available")
        if (composition[1] > 0 and want_unsafe == 0) or (composition[0] > 0 and want_safe == 0):
            raise InsufficientClass(f"pool {composition} would be missing a class it requests")

        rng = stream(seed, "pool", repr(composition))
        chosen = np.concatenate([rng.choice(safe_idx, size=want_safe, replace=False) if want_safe else [],
                                 rng.choice(unsafe_idx, size=want_unsafe, replace=False) if want_unsafe else []])
        rows = tuple(labeled[int(i)] for i in np.sort(chosen.astype(np.int64)))
        pool = TestPool(rows=rows, requested=composition)
        logger.info(f"Pool {pool.name}: {pool.n_safe} safe, {pool.n_unsafe} unsafe")
        return pool

    def pool_plan(self, labeled: Sequence[LabeledTest], seed: int,
                  compositions: Sequence[Tuple[float, float]] = STANDARD_COMPOSITIONS,
                  size: Optional[int] = None) -> List[TestPool]:
        return [self.build_pool(labeled, c, derive_seed(seed, "pool-plan", i), size)
                for i, c in enumerate(compositions)]

    def _run(self, experiment: str, pool: TestPool, selector: Selector, target: int, seed: int) -> SelectionRun:
        if target < 1:
            raise ValueError(f"the {experiment} target must be at least 1, got {target}")
        order = stream(seed, "draw").permutation(len(pool.rows))
        scores = selector.scores(pool)
        flags = selector.flags(pool)
        steps: List[SelectionStep] = []
        executed = skipped = executed_unsafe = 0
        time_safe = time_unsafe = 0.0
        confusion = EvalReport()

        def done() -> bool:
            return (executed if experiment == "fix" else executed_unsafe) >= target

        for i in order:
            if done():
                break
            row = pool.rows[int(i)]
            p = None if scores is None else float(scores[int(i)])
            # No model means every drawn test is selected.
            selected = True if flags is None else bool(flags[int(i)])
            confusion = confusion.record(selected, row.is_unsafe)
            if not selected:
                skipped += 1
                steps.append(SelectionStep(test_id=row.test_id, predicted=Label.SAFE, p_unsafe=p, executed=False))
                continue
            executed += 1
            if row.is_unsafe:
                executed_unsafe += 1
                time_unsafe += row.wall_cost
            else:
                time_safe += row.wall_cost
            steps.append(SelectionStep(test_id=row.test_id,
                                       predicted=None if p is None else Label.UNSAFE, p_unsafe=p,
                                       executed=True, revealed=row.label, wall_cost=row.wall_cost))

        exhausted = not done()
        if exhausted:
            notice = PoolExhausted(f"{experiment.upper()} run with {selector.name} exhausted pool {pool.name} "
                                   f"before reaching {target}", pool=pool.name, strategy=selector.name)
            logger.warning(f"{notice.code}: {notice.detail}")
        return SelectionRun(experiment=experiment, strategy=selector.name, pool=pool.name, target=target,
                            seed=seed, steps=steps, drawn=len(steps), executed=executed, skipped=skipped,
                            executed_unsafe=executed_unsafe, executed_safe=executed - executed_unsafe,
                            time_safe=time_safe, time_unsafe=time_unsafe, confusion=confusion,
                            exhausted=exhausted)

    def run_fix(self, pool: TestPool, selector: Selector, suite_size: int, seed: int) -> SelectionRun:
        """Draw until the suite holds ``suite_size`` executed tests; selectors skip predicted-safe draws."""
        return self._run("fix", pool, selector, suite_size, seed)

    def run_reach(self, pool: TestPool, selector: Selector, n: int, seed: int) -> SelectionRun:
        """Draw until ``n`` executed tests have revealed Unsafe."""
        return self._run("reach", pool, selector, n, seed)

    def run_repetitions(self, experiment: str, pool: TestPool, selector: Selector, target: int,
                        reps: int = 30, master_seed: int = 0) -> RepetitionAggregate:
        """
        Repeat a FIX or REACH run with per-repetition seeds derived from ``master_seed``.

        Args:
            experiment: "fix" or "reach"
            pool: The pool every repetition draws from
            selector: Baseline, oracle or model selector
            target: Suite size S for FIX, unsafe goal N for REACH
            reps: Number of repetitions
            master_seed: Seed the repetition seeds are derived from

        Returns:
            Per-metric means and population standard deviations, the cumulative
            confusion counts and every run
        """
        if reps < 1:
            raise ValueError("reps must be at least 1")
        run = self.run_fix if experiment == "fix" else self.run_reach
        runs = [run(pool, selector, target, derive_seed(master_seed, experiment, "rep", r)) for r in range(reps)]
        names = list(runs[0].summary())
        table = np.array([[r.summary()[n] for n in names] for r in runs])
        cumulative = runs[0].confusion
        for r in runs[1:]:
            cumulative = cumulative + r.confusion
        aggregate = RepetitionAggregate(
            experiment=experiment, strategy=selector.name, pool=pool.name, target=target, reps=reps,
            master_seed=master_seed,
            mean={n: float(v) for n, v in zip(names, table.mean(axis=0))},
            std={n: float(v) for n, v in zip(names, table.std(axis=0))},
            cumulative=cumulative, exhausted_runs=sum(1 for r in runs if r.exhausted), runs=runs)
        logger.info(f"{experiment.upper()} {selector.name} on {pool.name}: mean unsafe ratio "
                    f"{aggregate.mean['unsafe_ratio']:.3f}, mean drawn {aggregate.mean['drawn']:.1f}")
        return aggregate

    def cross_evaluate(self, model: Classifier, foreign: Dataset) -> CrossEvalReport:
        report = learning_service.evaluate(model, foreign)
        logger.info(f"Model from '{model.provenance}' on '{foreign.provenance}': "
                    f"accuracy {report.accuracy:.3f}")
        return CrossEvalReport(model_provenance=model.provenance, data_provenance=foreign.provenance,
                               report=report)

    def evaluate_by_provenance(self, model: Classifier, combined: Dataset) -> List[CrossEvalReport]:
        """One report per provenance tag found in a combined dataset, in first-seen order."""
        tags: List[str] = []
        for tag in combined.row_provenance:
            if tag not in tags:
                tags.append(tag)
        return [self.cross_evaluate(model, combined.only_provenance(tag)) for tag in tags]


experiment_service = ExperimentService()
