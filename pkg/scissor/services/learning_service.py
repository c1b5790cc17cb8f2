import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from scissor.core.config import Hyperparameters
from scissor.core.errors import DegenerateData, SchemaMismatch, SingleClass, TooFewRows
from scissor.core.seeding import derive_seed, stream
from scissor.schemas import (
    METRIC_NAMES,
    Classifier,
    ClassifierKind,
    CrossValidationReport,
    Dataset,
    EvalReport,
    FeatureRanking,
    FeatureSchema,
    FeatureScore,
    Label,
    LogisticParams,
    StudyRow,
    TestCase,
)
from scissor.services import classifiers
from scissor.services.feature_service import feature_service

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1

RANK_THRESHOLDS = {"infogain": 0.01, "correlation": 0.1}

TRAIN_FRACTIONS = (0.4, 0.5, 0.6, 0.8)


def _require_both_classes(d: Dataset, what: str) -> None:
    if d.n_unsafe == 0 or d.n_safe == 0:
        raise SingleClass(f"{what} needs both classes; got {d.n_safe} safe and {d.n_unsafe} unsafe rows",
                          provenance=d.provenance)


class LearningService:
    """Rebalancing, splits, training, prediction, evaluation and feature ranking."""

    def oversample(self, d: Dataset, seed: int) -> Dataset:
        """
        Random oversampling of the minority class.

        Originals keep their order; the added duplicates are appended after them.
        """
        _require_both_classes(d, "oversampling")
        unsafe = np.nonzero(d.y == 1)[0]
        safe = np.nonzero(d.y == 0)[0]
        minority = unsafe if len(unsafe) < len(safe) else safe
        deficit = abs(len(unsafe) - len(safe))
        if deficit == 0:
            return d
        rng = stream(seed, "oversample")
        extra = rng.choice(minority, size=deficit, replace=True)
        return d.take(np.concatenate([np.arange(len(d)), extra]))

    def split(self, d: Dataset, train_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
        if not 0 < train_fraction < 1:
            raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
        order = stream(seed, "split").permutation(len(d))
        n_train = int(math.floor(train_fraction * len(d) + 1e-9))
        return d.take(order[:n_train]), d.take(order[n_train:])

    def offline_split(self, d: Dataset, train_fraction: float = 0.8, seed: int = 0) -> Tuple[Dataset, Dataset]:
        """
        Balanced training side plus everything else.

        Each class contributes floor(train_fraction * minority count) rows to training;
        the remaining rows form the (unbalanced) side pools are drawn from.
        """
        _require_both_classes(d, "the offline split")
        per_class = int(math.floor(train_fraction * min(d.n_safe, d.n_unsafe) + 1e-9))
        rng = stream(seed, "offline-split")
        train_idx, rest_idx = [], []
        for c in (0, 1):
            rows = rng.permutation(np.nonzero(d.y == c)[0])
            train_idx.append(rows[:per_class])
            rest_idx.append(rows[per_class:])
        return d.take(np.concatenate(train_idx)), d.take(np.sort(np.concatenate(rest_idx)))

    def train(self, kind: Union[ClassifierKind, str], d: Dataset, hyper: Optional[Hyperparameters] = None,
              seed: int = 0, warm_start: Optional[Classifier] = None) -> Classifier:
        """
        Fit a classifier.

        Args:
            kind: Model family
            d: Training data; both classes must be present except for the majority baseline
            hyper: Hyperparameters, defaults when omitted
            seed: Seed for the forest's bags and feature draws
            warm_start: Earlier logistic model to start gradient descent from

        Returns:
            The immutable trained Classifier
        """
        kind = ClassifierKind(kind)
        hyper = hyper or Hyperparameters()
        if len(d) < 2:
            raise TooFewRows(f"training needs at least 2 rows, got {len(d)}")
        if kind is not ClassifierKind.MAJORITY:
            _require_both_classes(d, "training")

        if kind is ClassifierKind.MAJORITY:
            active = list(range(len(d.feature_names)))
        else:
            spread = np.ptp(d.X, axis=0)
            active = [i for i in range(len(d.feature_names)) if spread[i] > 0]
            dropped = [d.feature_names[i] for i in range(len(d.feature_names)) if spread[i] == 0]
            if not active:
                raise DegenerateData("every feature column is constant", provenance=d.provenance)
            if dropped:
                logger.warning(f"Dropping {len(dropped)} constant feature(s) before training: {dropped}")

        X = d.X[:, active]
        kinds = [d.schema.kinds[i] for i in active]
        if kind is ClassifierKind.LOGISTIC:
            start = None
            if warm_start is not None and warm_start.active == active and isinstance(warm_start.params, LogisticParams):
                start = warm_start.params
            params = classifiers.fit_logistic(X, d.y, hyper, warm_start=start)
        elif kind is ClassifierKind.DECISION_TREE:
            params = classifiers.fit_tree(X, d.y, hyper)
        elif kind is ClassifierKind.RANDOM_FOREST:
            params = classifiers.fit_forest(X, d.y, hyper, seed)
        elif kind is ClassifierKind.NAIVE_BAYES:
            params = classifiers.fit_naive_bayes(X, d.y, kinds, hyper)
        else:
            params = classifiers.fit_majority(d.y)

        logger.debug(f"Trained {kind.value} on {len(d)} rows ({d.n_unsafe} unsafe), "
                     f"{len(active)} active features")
        return Classifier(kind=kind, feature_set=d.schema.feature_set,
                          feature_names=list(d.feature_names), feature_kinds=list(d.schema.kinds),
                          active=active, provenance=d.provenance, seed=seed, hyper=hyper,
                          params=params)

    def _check_schema(self, c: Classifier, schema: FeatureSchema) -> None:
        if schema.feature_set != c.feature_set or list(schema.names) != c.feature_names:
            raise SchemaMismatch(f"model trained on {c.feature_set} features "
                                 f"({len(c.feature_names)} columns) cannot score "
                                 f"{schema.feature_set} data ({len(schema.names)} columns)")

    def predict_proba(self, c: Classifier, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(c.feature_names):
            raise SchemaMismatch(f"expected rows of {len(c.feature_names)} features, got shape {X.shape}")
        p = classifiers.predict_proba(c.params, X[:, c.active])
        return np.clip(p, 0.0, 1.0)

    def predict_unsafe(self, c: Classifier, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(c.feature_names):
            raise SchemaMismatch(f"expected rows of {len(c.feature_names)} features, got shape {X.shape}")
        return classifiers.predict_unsafe(c.params, X[:, c.active])

    def predict(self, c: Classifier, row: Sequence[float]) -> Tuple[Label, float]:
        """
        Label and p(Unsafe) for one row.

        p = 0.5 classifies Unsafe. A forest labels by the vote of its trees, so its label
        can disagree with p, the mean of the tree probabilities.
        """
        X = np.asarray([row], dtype=float)
        p = float(self.predict_proba(c, X)[0])
        return Label.from_flag(bool(self.predict_unsafe(c, X)[0])), p

    def predict_dataset(self, c: Classifier, d: Dataset) -> np.ndarray:
        self._check_schema(c, d.schema)
        return self.predict_proba(c, d.X)

    def _test_matrix(self, c: Classifier, tests: Sequence[TestCase]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Feature rows for ``tests`` and, for segment models, the test each row belongs to."""
        if c.feature_set == "full":
            return np.array([feature_service.extract_full_road(t).values() for t in tests], dtype=float), None
        rows, owner = [], []
        for i, t in enumerate(tests):
            for f in feature_service.extract_segments(t):
                rows.append(f.values())
                owner.append(i)
        return np.array(rows, dtype=float), np.asarray(owner)

    def score_tests(self, c: Classifier, tests: Sequence[TestCase]) -> np.ndarray:
        """
        p(Unsafe) per test case.

        Segment-level models score every segment and take the maximum, so a test is
        predicted Unsafe as soon as one of its segments is.
        """
        if not tests:
            return np.zeros(0)
        X, owner = self._test_matrix(c, tests)
        p = self.predict_proba(c, X)
        if owner is None:
            return p
        out = np.zeros(len(tests))
        np.maximum.at(out, owner, p)
        return out

    def flag_tests(self, c: Classifier, tests: Sequence[TestCase]) -> np.ndarray:
        """Predicted label per test case, True = Unsafe; segment models flag a test on any segment."""
        if not tests:
            return np.zeros(0, dtype=bool)
        X, owner = self._test_matrix(c, tests)
        flags = self.predict_unsafe(c, X)
        if owner is None:
            return flags
        out = np.zeros(len(tests), dtype=bool)
        np.logical_or.at(out, owner, flags)
        return out

    def confusion(self, predicted_unsafe: np.ndarray, actual_unsafe: np.ndarray) -> EvalReport:
        pred = np.asarray(predicted_unsafe, dtype=bool)
        act = np.asarray(actual_unsafe, dtype=bool)
        return EvalReport(tp=int(np.sum(pred & act)), fp=int(np.sum(pred & ~act)),
                          tn=int(np.sum(~pred & ~act)), fn=int(np.sum(~pred & act)))

    def evaluate(self, c: Classifier, d: Dataset) -> EvalReport:
        if len(d) == 0:
            raise TooFewRows("cannot evaluate on an empty dataset")
        self._check_schema(c, d.schema)
        return self.confusion(self.predict_unsafe(c, d.X), d.y == 1)

    def kfold(self, kind: Union[ClassifierKind, str], d: Dataset, k: int = 10,
              hyper: Optional[Hyperparameters] = None, seed: int = 0,
              rebalance: bool = False) -> CrossValidationReport:
        """
        K-fold cross-validation on all rows.

        Each row lands in exactly one test fold. Fold metrics are macro-averaged; the
        pooled confusion counts are reported next to them. A training side holding a
        single class (leave-one-out on a rare class, say) is fitted with the majority
        baseline instead of ``kind``.
        """
        kind = ClassifierKind(kind)
        if k < 2 or len(d) < k:
            raise TooFewRows(f"{k}-fold cross-validation needs k >= 2 and at least k rows, got {len(d)}")
        order = stream(seed, "kfold").permutation(len(d))
        folds = np.array_split(order, k)
        reports = []
        for i, test_idx in enumerate(folds):
            train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
            train = d.take(train_idx)
            fold_seed = derive_seed(seed, "fold", i)
            fold_kind = kind
            if train.n_safe == 0 or train.n_unsafe == 0:
                if kind is not ClassifierKind.MAJORITY:
                    logger.warning(f"Fold {i} trains on a single class ({train.n_safe} safe, "
                                   f"{train.n_unsafe} unsafe); falling back to the majority baseline")
                fold_kind = ClassifierKind.MAJORITY
            elif rebalance:
                train = self.oversample(train, fold_seed)
            model = self.train(fold_kind, train, hyper, fold_seed)
            reports.append(self.evaluate(model, d.take(test_idx)))
        mean = {name: float(np.mean([r.metrics()[name] for r in reports])) for name in METRIC_NAMES}
        pooled = reports[0]
        for r in reports[1:]:
            pooled = pooled + r
        logger.info(f"{k}-fold {kind.value}: accuracy {mean['accuracy']:.3f}, "
                    f"unsafe F1 {mean['f1_unsafe']:.3f}")
        return CrossValidationReport(k=k, kind=kind, mean=mean, pooled=pooled, folds=reports)

    def rank_features(self, d: Dataset, method: str = "infogain",
                      threshold: Optional[float] = None) -> FeatureRanking:
        """
        Score every feature against the label.

        ``infogain`` is the best information gain over the tree's threshold candidates
        (leaf size 1); ``correlation`` is |Pearson r| with the 0/1 label. Equal scores
        are ordered by feature name.
        """
        if method not in RANK_THRESHOLDS:
            raise ValueError(f"unknown ranking method '{method}'")
        _require_both_classes(d, "feature ranking")
        cut = RANK_THRESHOLDS[method] if threshold is None else threshold
        y = d.y.astype(float)
        scores = []
        for i, name in enumerate(d.feature_names):
            x = d.X[:, i]
            if method == "infogain":
                score, _ = classifiers.best_information_gain(x, d.y)
            elif np.std(x) == 0:
                score = 0.0
            else:
                score = abs(float(np.corrcoef(x, y)[0, 1]))
            scores.append(FeatureScore(feature=name, score=score, selected=score >= cut))
        scores.sort(key=lambda s: (-s.score, s.feature))
        return FeatureRanking(method=method, threshold=cut, provenance=d.provenance, scores=scores)

    def training_matrix(self, datasets: Sequence[Dataset], kinds: Sequence[Union[ClassifierKind, str]],
                        train_fractions: Sequence[float] = TRAIN_FRACTIONS, seed: int = 0,
                        hyper: Optional[Hyperparameters] = None, k: Optional[int] = None) -> List[StudyRow]:
        """Train/test every (dataset, kind, fraction) cell, plus one K-fold row per cell when ``k`` is set."""
        rows: List[StudyRow] = []
        for d in datasets:
            for kind in kinds:
                kind = ClassifierKind(kind)
                for fraction in train_fractions:
                    cell_seed = derive_seed(seed, d.provenance, kind.value, repr(fraction))
                    train, test = self.split(d, fraction, cell_seed)
                    model = self.train(kind, self.oversample(train, cell_seed), hyper, cell_seed)
                    report = self.evaluate(model, test)
                    rows.append(StudyRow(provenance=d.provenance, feature_set=d.schema.feature_set,
                                         kind=kind, protocol=f"split-{fraction}",
                                         train_rows=len(train), test_rows=len(test),
                                         metrics=report.metrics(), confusion=report))
                if k:
                    cv = self.kfold(kind, d, k, hyper, derive_seed(seed, d.provenance, kind.value, "kfold"))
                    rows.append(StudyRow(provenance=d.provenance, feature_set=d.schema.feature_set,
                                         kind=kind, protocol=f"kfold-{k}",
                                         train_rows=len(d) - len(d) // k, test_rows=len(d) // k,
                                         metrics=cv.mean, confusion=cv.pooled))
        return rows

    def save_model(self, c: Classifier, path: Path) -> None:
        Path(path).write_text(c.model_dump_json(indent=1) + "\n", encoding="utf-8")

    def load_model(self, path: Path) -> Classifier:
        try:
            c = Classifier.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except ValidationError as e:
            raise SchemaMismatch(f"invalid model file {path}: {e}", path=str(path))
        if c.schema_version != MODEL_SCHEMA_VERSION:
            raise SchemaMismatch(f"model schema version {c.schema_version} is not supported",
                                 path=str(path))
        return c


learning_service = LearningService()
