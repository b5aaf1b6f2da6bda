"""
Artifact I/O for pipeline stages: atomic writers for JSON, JSON Lines, CSV
and text, plus readers for the intermediate JSONL files.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Type

import pandas as pd
from pydantic import BaseModel, ValidationError

from .errors import InputError, VerdictFileError
from .labeler import VerdictRecord
from .stats import RunCount

logger = logging.getLogger(__name__)

RUN_COLUMNS = ["claim_id", "model", "condition", "realized"]


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False)


class ReportWriter:
    """Writes artifacts under one directory; every file is replaced atomically."""

    def __init__(self, report_dir):
        self.report_dir = Path(report_dir)
        self.report_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        return self.report_dir / name

    def write_text(self, name, text) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
            os.replace(tmp, path)
        except OSError:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        logger.debug(f"Wrote {path}")
        return path

    def write_json(self, name, obj) -> Path:
        return self.write_text(name, json.dumps(obj, ensure_ascii=False, indent=2) + "\n")

    def write_jsonl(self, name, records: Iterable) -> Path:
        lines = []
        for record in records:
            if isinstance(record, BaseModel):
                record = record.model_dump(mode="json")
            lines.append(_dumps(record) + "\n")
        return self.write_text(name, "".join(lines))

    def write_csv(self, name, frame: pd.DataFrame) -> Path:
        return self.write_text(name, frame.to_csv(index=False, lineterminator="\n"))


def read_jsonl(path, model: Type[BaseModel], error_cls=InputError) -> List[BaseModel]:
    path = Path(path)
    if not path.exists():
        raise error_cls(f"File not found: {path}")

    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(model.model_validate(json.loads(line)))
            except (json.JSONDecodeError, ValidationError) as e:
                raise error_cls(f"{path}:{line_no}: malformed {model.__name__} row: {e}") from e
    return records


def load_verdicts(path) -> List[VerdictRecord]:
    verdicts = read_jsonl(path, VerdictRecord, VerdictFileError)
    seen = set()
    for v in verdicts:
        if v.key in seen:
            raise VerdictFileError(f"{path}: duplicate verdict for {v.key}")
        seen.add(v.key)
    logger.info(f"Loaded {len(verdicts)} verdicts from {path}")
    return verdicts



def load_run_counts(path) -> List[RunCount]:
    """
    Read the per-run citation counts written by verify (compliance.csv). Runs
    whose output had no reference list appear with realized = 0.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"Run counts not found: {path}")

    frame = pd.read_csv(path, dtype={"claim_id": str, "model": str, "condition": str})
    missing = [c for c in RUN_COLUMNS if c not in frame.columns]
    if missing:
        raise InputError(f"{path}: missing columns {', '.join(missing)}")

    try:
        runs = [
            RunCount(claim_id=row.claim_id, model_id=row.model, condition=row.condition, n_citations=int(row.realized))
            for row in frame[RUN_COLUMNS].itertuples(index=False)
        ]
    except (ValidationError, ValueError) as e:
        raise InputError(f"{path}: malformed run row: {e}") from e

    logger.info(f"Loaded {len(runs)} runs from {path} ({sum(1 for r in runs if r.n_citations == 0)} without references)")
    return runs
