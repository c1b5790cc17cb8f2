import argparse
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Type, TypeVar

import pandas as pd
from pydantic import BaseModel, ValidationError

from scissor.cli import artifacts
from scissor.cli.schemas import (
    STAGE_ORDER,
    EvalFile,
    PipelineConfig,
    RankingFile,
    RealTimeReport,
    SelectionReport,
    StudyReport,
)
from scissor.core.config import (
    DriverConfig,
    ExperimentConfig,
    FeatureConfig,
    GeneratorConfig,
    Hyperparameters,
    LearnConfig,
    RealTimeConfig,
)
from scissor.core.errors import ConfigInvalid, ScissorError, StageFailure
from scissor.core.seeding import derive_seed
from scissor.schemas import Classifier, Dataset, LabeledTest, TestPool
from scissor.services.experiment_service import (
    BaselineSelector,
    ModelSelector,
    OracleSelector,
    experiment_service,
)
from scissor.services.feature_service import FeatureService, feature_service
from scissor.services.generation_service import generation_service
from scissor.services.learning_service import learning_service
from scissor.services.realtime_service import realtime_service
from scissor.services.road_service import road_service
from scissor.services.simulation_service import simulation_service

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


def load_config(path: Optional[str], model: Type[M], **overrides) -> M:
    """Parse a strict JSON config file (or defaults) and apply flag overrides."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return model.model_validate(raw)
    except ValidationError as e:
        raise ConfigInvalid(f"invalid {model.__name__}: {e}", path=path)
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"config file is not JSON: {e}", path=path)


def driver_for(name: str, config_path: Optional[str], noise_seed: int) -> DriverConfig:
    if config_path:
        driver = load_config(config_path, DriverConfig)
    else:
        driver = simulation_service.driver_profile(name)
    return driver.model_copy(update={"noise_seed": noise_seed})


def load_labeled_many(paths: Sequence[str]) -> List[LabeledTest]:
    labeled: List[LabeledTest] = []
    for p in paths:
        part, _ = simulation_service.load_labeled(Path(p))
        labeled.extend(part)
    return labeled


def pool_file_name(pool: TestPool) -> str:
    safe, unsafe = pool.requested
    return f"pool-{round(safe * 100)}-{round(unsafe * 100)}.json"


def selection_frame(report: SelectionReport) -> pd.DataFrame:
    return pd.DataFrame(artifacts.selection_rows(report))


def run_selection(experiment: str, pools: Sequence[TestPool], selectors: Sequence, target: int,
                  reps: int, seed: int) -> SelectionReport:
    aggregates = []
    for pool in pools:
        for selector in selectors:
            # Same master seed for every strategy, so they see the same draw sequences.
            master = derive_seed(seed, experiment, pool.name)
            aggregates.append(experiment_service.run_repetitions(experiment, pool, selector, target,
                                                                 reps, master))
    return SelectionReport(experiment=experiment, aggregates=aggregates)


# --- single-step subcommands ---

def cmd_generate(args: argparse.Namespace) -> int:
    config = load_config(args.config, GeneratorConfig, seed=args.seed)
    tests, stats = generation_service.generate_with_stats(config, args.n)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    road_service.dump_tests(tests, out)
    artifacts.write_manifest(artifacts.manifest_path(out), "generate", args.seed,
                             {"generator": config.model_dump(mode="json"), "n": args.n,
                              "stats": stats.model_dump()}, outputs=[out])
    return 0


def cmd_label(args: argparse.Namespace) -> int:
    tests = road_service.load_tests(Path(args.tests))
    driver = driver_for(args.driver, args.driver_config, args.seed)
    labeled = simulation_service.label_batch(tests, driver)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    simulation_service.dump_labeled(labeled, driver, out)
    artifacts.write_manifest(artifacts.manifest_path(out), "label", args.seed,
                             {"driver": driver.model_dump(mode="json")},
                             inputs=[Path(args.tests)], outputs=[out])
    return 0


def cmd_extract(args: argparse.Namespace) -> int:
    service = FeatureService(FeatureConfig(absolute_angles=not args.signed_angles))
    parts = []
    for p in args.labeled:
        labeled, corpus = simulation_service.load_labeled(Path(p))
        parts.append(service.build_dataset(labeled, args.features, corpus.provenance))
    dataset = Dataset.concat(parts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    service.write_csv(dataset, out)
    outputs = [out]
    if args.jsonl:
        service.write_jsonl(dataset, Path(args.jsonl))
        outputs.append(Path(args.jsonl))
    artifacts.write_manifest(artifacts.manifest_path(out), "extract", args.seed,
                             {"feature_set": args.features, "features": service.config.model_dump()},
                             inputs=[Path(p) for p in args.labeled], outputs=outputs)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    hyper = load_config(args.config, Hyperparameters)
    dataset = feature_service.read_csv(Path(args.features))
    if not args.no_rebalance:
        dataset = learning_service.oversample(dataset, args.seed)
    model = learning_service.train(args.model, dataset, hyper, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    learning_service.save_model(model, out)
    artifacts.write_manifest(artifacts.manifest_path(out), "train", args.seed,
                             {"kind": model.kind.value, "rebalance": not args.no_rebalance,
                              "hyper": hyper.model_dump(mode="json")},
                             inputs=[Path(args.features)], outputs=[out])
    return 0


def evaluate_file(model: Classifier, dataset: Dataset) -> EvalFile:
    report = learning_service.evaluate(model, dataset)
    by_provenance = []
    if len(set(dataset.row_provenance)) > 1:
        by_provenance = experiment_service.evaluate_by_provenance(model, dataset)
    return EvalFile(model_provenance=model.provenance, data_provenance=dataset.provenance,
                    report=report, metrics=report.metrics(), by_provenance=by_provenance)


def cmd_eval(args: argparse.Namespace) -> int:
    model = learning_service.load_model(Path(args.model))
    dataset = feature_service.read_csv(Path(args.features))
    out = artifacts.write_model(evaluate_file(model, dataset), Path(args.report))
    artifacts.write_manifest(artifacts.manifest_path(out), "eval", args.seed, {},
                             inputs=[Path(args.model), Path(args.features)], outputs=[out])
    return 0


def write_ranking(dataset: Dataset, method: str, out: Path) -> List[Path]:
    ranking = learning_service.rank_features(dataset, method)
    json_path = artifacts.write_model(RankingFile(ranking=ranking), out)
    frame = pd.DataFrame([s.model_dump() for s in ranking.scores])
    csv_path = artifacts.write_frame(frame, out.with_suffix(".csv"))
    return [json_path, csv_path]


def cmd_rank(args: argparse.Namespace) -> int:
    dataset = feature_service.read_csv(Path(args.features))
    out = Path(args.out)
    outputs = write_ranking(dataset, args.method, out)
    artifacts.write_manifest(artifacts.manifest_path(out), "rank", args.seed, {"method": args.method},
                             inputs=[Path(args.features)], outputs=outputs)
    return 0


def cmd_pools(args: argparse.Namespace) -> int:
    labeled = load_labeled_many(args.labeled)
    config = load_config(args.config, ExperimentConfig, pool_size=args.size)
    pools = experiment_service.pool_plan(labeled, args.seed, config.compositions, config.pool_size)
    out_dir = Path(args.out_dir)
    outputs = [artifacts.write_model(pool, out_dir / pool_file_name(pool)) for pool in pools]
    artifacts.write_manifest(out_dir / "pools.manifest.json", "pools", args.seed,
                             config.model_dump(mode="json"),
                             inputs=[Path(p) for p in args.labeled], outputs=outputs)
    return 0


def _selectors(args: argparse.Namespace) -> List:
    selectors: List = [BaselineSelector()]
    if args.model:
        selectors.append(ModelSelector(learning_service.load_model(Path(args.model))))
    if args.oracle:
        selectors.append(OracleSelector())
    return selectors


def _cmd_selection(args: argparse.Namespace, experiment: str, target: int) -> int:
    pools = [TestPool.model_validate_json(Path(p).read_text(encoding="utf-8")) for p in args.pool]
    report = run_selection(experiment, pools, _selectors(args), target, args.reps, args.seed)
    out = artifacts.write_model(report, Path(args.out))
    csv_path = artifacts.write_frame(selection_frame(report), out.with_suffix(".csv"))
    inputs = [Path(p) for p in args.pool] + ([Path(args.model)] if args.model else [])
    artifacts.write_manifest(artifacts.manifest_path(out), experiment, args.seed,
                             {"target": target, "reps": args.reps, "oracle": args.oracle},
                             inputs=inputs, outputs=[out, csv_path])
    return 0


def cmd_fix(args: argparse.Namespace) -> int:
    return _cmd_selection(args, "fix", args.suite_size)


def cmd_reach(args: argparse.Namespace) -> int:
    return _cmd_selection(args, "reach", args.n)


def cmd_realtime(args: argparse.Namespace) -> int:
    config = load_config(args.config, RealTimeConfig, mode=args.mode, budget_s=args.budget_s)
    generator = load_config(args.generator_config, GeneratorConfig)
    learn = load_config(args.learn_config, LearnConfig)
    driver = driver_for(args.driver, args.driver_config, derive_seed(args.seed, "realtime-driver"))
    model = learning_service.load_model(Path(args.model)) if args.model else None
    runs = [realtime_service.run_realtime(config, generator, driver, learn,
                                          derive_seed(args.seed, "realtime", i), model, args.oracle)
            for i in range(args.runs)]
    out = artifacts.write_model(RealTimeReport(runs=runs), Path(args.out))
    artifacts.write_manifest(artifacts.manifest_path(out), "realtime", args.seed,
                             {"realtime": config.model_dump(mode="json"),
                              "generator": generator.model_dump(mode="json"),
                              "driver": driver.model_dump(mode="json"),
                              "learn": learn.model_dump(mode="json"), "runs": args.runs},
                             inputs=[Path(args.model)] if args.model else [], outputs=[out])
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    frame = artifacts.consolidate([Path(p) for p in args.inputs])
    out = Path(args.out)
    csv_path = artifacts.write_frame(frame, out.with_suffix(".csv"))
    json_path = out.with_suffix(".json")
    json_path.write_text(json.dumps(artifacts.sections(frame), indent=1) + "\n", encoding="utf-8")
    artifacts.write_manifest(artifacts.manifest_path(json_path), "report", args.seed, {},
                             inputs=[Path(p) for p in args.inputs], outputs=[csv_path, json_path])
    return 0


def cmd_study(args: argparse.Namespace) -> int:
    hyper = load_config(args.config, Hyperparameters)
    datasets = []
    for p in args.labeled:
        labeled, corpus = simulation_service.load_labeled(Path(p))
        datasets.append(feature_service.build_dataset(labeled, args.features, corpus.provenance))
    rows = learning_service.training_matrix(datasets, args.models, args.fractions, args.seed, hyper, args.kfold)
    out = artifacts.write_model(StudyReport(rows=rows), Path(args.out))
    flat = []
    for r in rows:
        row = {"provenance": r.provenance, "feature_set": r.feature_set, "kind": r.kind.value,
               "protocol": r.protocol, "train_rows": r.train_rows, "test_rows": r.test_rows}
        row.update(r.metrics)
        row.update(tp=r.confusion.tp, fp=r.confusion.fp, tn=r.confusion.tn, fn=r.confusion.fn)
        flat.append(row)
    csv_path = artifacts.write_frame(pd.DataFrame(flat), out.with_suffix(".csv"))
    artifacts.write_manifest(artifacts.manifest_path(out), "study", args.seed,
                             {"models": list(args.models), "fractions": list(args.fractions),
                              "kfold": args.kfold, "feature_set": args.features},
                             inputs=[Path(p) for p in args.labeled], outputs=[out, csv_path])
    return 0


# --- pipeline ---

class Pipeline:
    """Runs the enabled stages in order; stages hand artifacts to each other through files."""

    def __init__(self, config: PipelineConfig, config_path: Path, seed: int, out_dir: Path):
        self.config = config
        self.config_dir = config_path.parent
        self.config_path = config_path
        self.seed = seed
        self.out_dir = out_dir
        self.inputs: List[Path] = [config_path]
        self.outputs: List[Path] = []

    def path(self, artifact: str, default: str) -> Path:
        given = getattr(self.config.inputs, artifact)
        if given:
            p = Path(given)
            p = p if p.is_absolute() else self.config_dir / p
            if p not in self.inputs:
                self.inputs.append(p)
            return p
        return self.out_dir / default

    def require(self, path: Path) -> Path:
        if not path.exists():
            raise FileNotFoundError(2, "No such file or directory", str(path))
        return path

    def emit(self, *paths: Path) -> None:
        self.outputs.extend(paths)

    def stage_generate(self) -> None:
        config = self.config.generator.model_copy(update={"seed": derive_seed(self.seed, "generate")})
        tests = generation_service.generate(config, self.config.n_tests)
        out = self.out_dir / "tests.json"
        road_service.dump_tests(tests, out)
        self.emit(out)

    def stage_label(self) -> None:
        tests = road_service.load_tests(self.require(self.path("tests", "tests.json")))
        driver = driver_for(self.config.driver, None, derive_seed(self.seed, "label"))
        out = self.out_dir / "labeled.json"
        simulation_service.dump_labeled(simulation_service.label_batch(tests, driver), driver, out)
        self.emit(out)

    def stage_extract(self) -> None:
        labeled, corpus = simulation_service.load_labeled(self.require(self.path("labeled", "labeled.json")))
        service = FeatureService(self.config.features)
        out = self.out_dir / "features.csv"
        service.write_csv(service.build_dataset(labeled, self.config.learn.feature_set, corpus.provenance), out)
        self.emit(out)

    def stage_train(self) -> None:
        labeled, corpus = simulation_service.load_labeled(self.require(self.path("labeled", "labeled.json")))
        dataset = feature_service.read_csv(self.require(self.path("features", "features.csv")))
        learn = self.config.learn
        seed = derive_seed(self.seed, "train")
        # Split whole tests so segment rows of one road never straddle the split.
        by_test = feature_service.build_dataset(labeled, "full", corpus.provenance)
        train_side, test_side = learning_service.offline_split(by_test, learn.train_fraction, seed)
        train_ids = set(train_side.test_ids)
        train_rows = [i for i, t in enumerate(dataset.test_ids) if t in train_ids]
        test_rows = [i for i, t in enumerate(dataset.test_ids) if t not in train_ids]
        train = dataset.take(train_rows)
        if learn.rebalance:
            train = learning_service.oversample(train, seed)
        model = learning_service.train(learn.kind, train, learn.hyper, seed)
        model_path = self.out_dir / "model.json"
        learning_service.save_model(model, model_path)
        split_path = self.out_dir / "split.json"
        split_path.write_text(json.dumps({"train": sorted(train_ids),
                                          "test": sorted(set(test_side.test_ids))}, indent=1) + "\n",
                              encoding="utf-8")
        eval_path = artifacts.write_model(evaluate_file(model, dataset.take(test_rows)),
                                          self.out_dir / "eval.json")
        self.emit(model_path, split_path, eval_path)
        if learn.kfold:
            cv = learning_service.kfold(learn.kind, dataset, learn.kfold, learn.hyper,
                                        derive_seed(self.seed, "kfold"), rebalance=learn.rebalance)
            self.emit(artifacts.write_model(cv, self.out_dir / "kfold.json"))

    def stage_rank(self) -> None:
        dataset = feature_service.read_csv(self.require(self.path("features", "features.csv")))
        for method in self.config.rank.methods:
            self.emit(*write_ranking(dataset, method, self.out_dir / f"ranking-{method}.json"))

    def _pools(self) -> List[TestPool]:
        labeled, _ = simulation_service.load_labeled(self.require(self.path("labeled", "labeled.json")))
        split = json.loads(self.require(self.out_dir / "split.json").read_text(encoding="utf-8"))
        test_ids = set(split["test"])
        held_out = [t for t in labeled if t.test_id in test_ids]
        exp = self.config.experiments
        return experiment_service.pool_plan(held_out, derive_seed(self.seed, "pools"), exp.compositions,
                                            exp.pool_size)

    def _model(self) -> Classifier:
        return learning_service.load_model(self.require(self.path("model", "model.json")))

    def _selection(self, experiment: str, target: int) -> None:
        selectors = [BaselineSelector(), ModelSelector(self._model())]
        report = run_selection(experiment, self._pools(), selectors, target, self.config.experiments.reps,
                               derive_seed(self.seed, experiment))
        out = artifacts.write_model(report, self.out_dir / f"{experiment}.json")
        self.emit(out, artifacts.write_frame(selection_frame(report), out.with_suffix(".csv")))

    def stage_fix(self) -> None:
        self._selection("fix", self.config.experiments.suite_size)

    def stage_reach(self) -> None:
        self._selection("reach", self.config.experiments.reach_n)

    def stage_realtime(self) -> None:
        needs_model = "pretrained" in self.config.realtime_modes
        model = self._model() if needs_model else None
        driver = driver_for(self.config.driver, None, derive_seed(self.seed, "realtime-driver"))
        runs = []
        for mode in self.config.realtime_modes:
            config = self.config.realtime.model_copy(update={"mode": mode})
            runs.append(realtime_service.run_realtime(config, self.config.generator, driver, self.config.learn,
                                                      derive_seed(self.seed, "realtime"), model))
        self.emit(artifacts.write_model(RealTimeReport(runs=runs), self.out_dir / "realtime.json"))

    def run(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        stages: Dict[str, Callable[[], None]] = {name: getattr(self, f"stage_{name}") for name in STAGE_ORDER}
        for name in STAGE_ORDER:
            if name not in self.config.stages:
                continue
            logger.info(f"Pipeline stage '{name}' starting")
            try:
                stages[name]()
            except FileNotFoundError as e:
                raise StageFailure(name, e, e.filename)
            except (ScissorError, OSError, ValueError) as e:
                raise StageFailure(name, e, getattr(e, "context", {}).get("path"))
            logger.info(f"Pipeline stage '{name}' finished")
        return artifacts.write_manifest(self.out_dir / "manifest.json", "pipeline", self.seed,
                                        self.config.model_dump(mode="json"), inputs=self.inputs,
                                        outputs=self.outputs)


def cmd_pipeline(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        raise ConfigInvalid(f"config file {config_path} does not exist", path=str(config_path))
    config = load_config(str(config_path), PipelineConfig)
    Pipeline(config, config_path, args.seed, Path(args.out_dir)).run()
    return 0
