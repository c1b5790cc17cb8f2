import hashlib
import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Annotated, Dict, List, Sequence, Union

import pandas as pd
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from scissor.cli.schemas import (
    REPORT_SCHEMA_VERSION,
    ArtifactDigest,
    EvalFile,
    RankingFile,
    RealTimeReport,
    RunManifest,
    SelectionReport,
    StudyReport,
)
from scissor.core.config import settings
from scissor.core.errors import SchemaMismatch

logger = logging.getLogger(__name__)

ReportFile = Annotated[Union[SelectionReport, RealTimeReport, EvalFile, RankingFile, StudyReport],
                       Field(discriminator="kind")]

_report_adapter = TypeAdapter(ReportFile)

KEY_COLUMNS = ["experiment", "strategy", "pool", "repetition", "row_type"]


def timestamp() -> str:
    return datetime.fromtimestamp(settings.SOURCE_DATE_EPOCH, tz=timezone.utc).isoformat()


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_model(model: BaseModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=1) + "\n", encoding="utf-8")
    return path


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def manifest_path(out: Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def write_manifest(path: Path, command: str, seed: int, config: dict,
                   inputs: Sequence[Path] = (), outputs: Sequence[Path] = ()) -> Path:
    """
    Write a run manifest next to the artifacts it describes.

    File paths are stored relative to the manifest's directory so the same run in two
    output directories yields the same manifest.
    """
    path = Path(path)
    base = path.parent.resolve()

    def entry(p: Path) -> ArtifactDigest:
        rel = os.path.relpath(Path(p).resolve(), base)
        return ArtifactDigest(path=Path(rel).as_posix(), sha256=sha256_file(p))

    manifest = RunManifest(tool_version=settings.TOOL_VERSION, command=command, seed=seed,
                           timestamp=timestamp(), config=config,
                           inputs=[entry(p) for p in inputs], outputs=[entry(p) for p in outputs])
    write_model(manifest, path)
    logger.debug(f"Wrote manifest {path} ({len(manifest.outputs)} outputs)")
    return path


def read_report(path: Path):
    raw = Path(path).read_text(encoding="utf-8")
    try:
        version = json.loads(raw).get("schema_version")
    except (json.JSONDecodeError, AttributeError):
        raise SchemaMismatch(f"{path} is not a report file", path=str(path))
    if version != REPORT_SCHEMA_VERSION:
        raise SchemaMismatch(f"{path} has report schema version {version}, "
                             f"expected {REPORT_SCHEMA_VERSION}", path=str(path))
    try:
        return _report_adapter.validate_json(raw)
    except ValidationError as e:
        raise SchemaMismatch(f"{path} is not a valid report: {e}", path=str(path))


def selection_rows(report: SelectionReport) -> List[Dict]:
    rows = []
    for agg in report.aggregates:
        for rep, run in enumerate(agg.runs):
            row = {"experiment": report.experiment, "strategy": agg.strategy, "pool": agg.pool,
                   "repetition": rep, "row_type": "repetition", "target": agg.target, "seed": run.seed}
            row.update(run.summary())
            row.update(tp=run.confusion.tp, fp=run.confusion.fp, tn=run.confusion.tn,
                       fn=run.confusion.fn, exhausted=run.exhausted)
            rows.append(row)
    return rows


def realtime_rows(report: RealTimeReport) -> List[Dict]:
    rows = []
    for rep, run in enumerate(report.runs):
        row = {"experiment": "realtime", "strategy": run.mode, "pool": "-", "repetition": rep,
               "row_type": "repetition", "target": run.budget_s, "seed": run.seed,
               "executed_unsafe": run.executed_unsafe, "executed_safe": run.executed_safe,
               "rejected": run.rejected, "retrains": run.retrains}
        row.update({f"time_{k}": v for k, v in run.ledger.model_dump().items()})
        row.update(tp=run.confusion.tp, fp=run.confusion.fp, tn=run.confusion.tn, fn=run.confusion.fn)
        rows.append(row)
    return rows


def per_repetition_frame(reports: Sequence) -> pd.DataFrame:
    rows: List[Dict] = []
    for report in reports:
        if isinstance(report, SelectionReport):
            rows.extend(selection_rows(report))
        elif isinstance(report, RealTimeReport):
            rows.extend(realtime_rows(report))
        else:
            raise SchemaMismatch(f"'{report.kind}' reports have no repetitions to consolidate")
    return pd.DataFrame(rows)


def consolidate(paths: Sequence[Path]) -> pd.DataFrame:
    """
    Merge report files into one flat table.

    Per-repetition rows are copied as they are; one ``mean`` row per (experiment,
    strategy, pool) averages their numeric columns.
    """
    if not paths:
        raise ValueError("report needs at least one input file")
    frame = per_repetition_frame([read_report(p) for p in paths])
    groups = ["experiment", "strategy", "pool"]
    numeric = [c for c in frame.columns
               if c not in KEY_COLUMNS + ["seed", "exhausted"] and pd.api.types.is_numeric_dtype(frame[c])]
    summary = frame.groupby(groups, sort=False)[numeric].mean().reset_index()
    summary["repetition"] = -1
    summary["row_type"] = "mean"
    merged = pd.concat([frame, summary], ignore_index=True, sort=False)
    front = KEY_COLUMNS + [c for c in merged.columns if c not in KEY_COLUMNS]
    return merged[front]


def sections(frame: pd.DataFrame) -> Dict[str, List[Dict]]:
    """The consolidated table split by experiment, for the JSON summary."""
    out: Dict[str, List[Dict]] = {}
    for experiment, part in frame.groupby("experiment", sort=False):
        records = json.loads(part.to_json(orient="records", double_precision=15))
        out[str(experiment)] = records
    return out
