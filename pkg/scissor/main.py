import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from scissor import __version__
from scissor.cli import commands
from scissor.cli.schemas import ErrorResponse
from scissor.core.config import settings
from scissor.core.errors import ScissorError
from scissor.services.learning_service import TRAIN_FRACTIONS

# Configure logging
logging.basicConfig(level=settings.log_level, stream=sys.stderr,
                    format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)

MODEL_KINDS = ["logistic", "decision_tree", "random_forest", "naive_bayes", "majority"]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="Master seed; there is no clock seeding")

    parser = argparse.ArgumentParser(prog="scissor", description="Self-driving-car test selection laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(handler=handler)
        return p

    p = add("generate", commands.cmd_generate, "Generate random road tests")
    p.add_argument("--count", "--n", dest="n", type=int, required=True, help="Number of tests")
    p.add_argument("--config", help="GeneratorConfig JSON")
    p.add_argument("--out", required=True)

    p = add("label", commands.cmd_label, "Label tests with the surrogate driver")
    p.add_argument("--tests", required=True)
    p.add_argument("--driver", default="moderate", help="cautious, moderate, reckless or planner")
    p.add_argument("--driver-config", help="DriverConfig JSON, overrides --driver")
    p.add_argument("--out", required=True)

    p = add("extract", commands.cmd_extract, "Extract feature tables")
    p.add_argument("--labeled", nargs="+", required=True)
    p.add_argument("--set", "--features", dest="features", choices=["full", "segment"], default="full",
                   help="Feature set")
    p.add_argument("--signed-angles", action="store_true", help="Angle statistics over signed angles")
    p.add_argument("--jsonl", help="Also write one JSON vector per line here")
    p.add_argument("--out", required=True)

    p = add("train", commands.cmd_train, "Train a classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="logistic")
    p.add_argument("--config", help="Hyperparameters JSON")
    p.add_argument("--no-rebalance", action="store_true")
    p.add_argument("--out", required=True)

    p = add("eval", commands.cmd_eval, "Evaluate a model on a feature table")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--report", required=True)

    p = add("rank", commands.cmd_rank, "Rank features by information gain or correlation")
    p.add_argument("--features", required=True)
    p.add_argument("--method", choices=["infogain", "correlation"], default="infogain")
    p.add_argument("--out", required=True)

    p = add("pools", commands.cmd_pools, "Build the offline test pools")
    p.add_argument("--labeled", nargs="+", required=True)
    p.add_argument("--config", help="ExperimentConfig JSON")
    p.add_argument("--size", type=int)
    p.add_argument("--out-dir", required=True)

    for name, handler, flag, dest, default in (("fix", commands.cmd_fix, "--suite-size", "suite_size", 50),
                                               ("reach", commands.cmd_reach, "--n", "n", 10)):
        p = add(name, handler, f"{name.upper()} selection experiment")
        p.add_argument("--pool", nargs="+", required=True)
        p.add_argument("--model")
        p.add_argument("--oracle", action="store_true", help="Also run the true-label selector")
        p.add_argument(flag, dest=dest, type=int, default=default)
        p.add_argument("--reps", type=int, default=30)
        p.add_argument("--out", required=True)

    p = add("realtime", commands.cmd_realtime, "Real-time generation and selection under a time budget")
    p.add_argument("--mode", choices=["baseline", "pretrained", "adaptive"], required=True)
    p.add_argument("--budget-s", type=float, default=21_600.0)
    p.add_argument("--model")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--driver", default="moderate")
    p.add_argument("--driver-config")
    p.add_argument("--generator-config")
    p.add_argument("--learn-config")
    p.add_argument("--config", help="RealTimeConfig JSON")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("report", commands.cmd_report, "Consolidate report files")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = add("study", commands.cmd_study, "Model training dimensions study")
    p.add_argument("--labeled", nargs="+", required=True)
    p.add_argument("--set", "--features", dest="features", choices=["full", "segment"], default="full",
                   help="Feature set")
    p.add_argument("--models", nargs="+", choices=MODEL_KINDS, default=MODEL_KINDS[:4])
    p.add_argument("--fractions", nargs="+", type=float, default=list(TRAIN_FRACTIONS))
    p.add_argument("--kfold", type=int)
    p.add_argument("--config", help="Hyperparameters JSON")
    p.add_argument("--out", required=True)

    p = add("pipeline", commands.cmd_pipeline, "Run the configured stages end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)

    return parser


def _error_dir(args: argparse.Namespace) -> Optional[Path]:
    for name in ("out_dir", "out", "report"):
        value = getattr(args, name, None)
        if value:
            return Path(value) if name == "out_dir" else Path(value).parent
    return None


def report_error(error: ScissorError, args: argparse.Namespace) -> int:
    record = ErrorResponse.model_validate(error.to_record(settings.SOURCE_DATE_EPOCH))
    text = record.model_dump_json(indent=1)
    print(text, file=sys.stderr)
    target = _error_dir(args)
    if target is not None:
        try:
            target.mkdir(parents=True, exist_ok=True)
            (target / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError as e:
            logger.error(f"Could not write error record to {target}: {e}")
    return error.exit_status


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ScissorError as e:
        logger.error(f"{args.command} failed: {e.detail}")
        return report_error(e, args)
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return report_error(ScissorError(str(e), path=getattr(e, "filename", None)), args)


if __name__ == "__main__":
    sys.exit(main())
