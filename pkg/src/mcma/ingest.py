"""Dataset files: CSV and JSON lines.

CSV header: ``study_id,rob_<domain>...,association``. JSON lines: one
object per RCT, ``{"study_id": ..., "rob": {<domain>: ...}, "association": ...}``.

Bias values accept 0/1 or the aliases ``low``/``high``; associations
accept 0/1/2 or ``negative``/``none``/``positive`` (case-insensitive).
Empty or missing values are rejected.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .core import LABEL_NAMES, Dataset, DomainError, MCMAError, Provenance, validate_dataset

BIAS_ALIASES = {"0": 0, "1": 1, "low": 0, "high": 1}
LABEL_ALIASES = {"0": 0, "1": 1, "2": 2, **{name: i for i, name in enumerate(LABEL_NAMES)}}
PREFIX = "rob_"


class ParseError(MCMAError):
    pass


def _bias_value(raw, field: str, where: str) -> int:
    key = str(raw).strip().lower() if raw is not None else ""
    if isinstance(raw, bool) or key not in BIAS_ALIASES:
        raise DomainError(f"{where}: field {field!r} has invalid bias value {raw!r} (expected 0/1/low/high)")
    return BIAS_ALIASES[key]


def _label_value(raw, where: str) -> int:
    key = str(raw).strip().lower() if raw is not None else ""
    if isinstance(raw, bool) or key not in LABEL_ALIASES:
        raise DomainError(f"{where}: field 'association' has invalid value {raw!r}")
    return LABEL_ALIASES[key]


def detect_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson"):
        return "jsonl"
    return "csv"


def ingest(path, fmt: str | None = None, domain_names: Sequence[str] | None = None) -> Dataset:
    """Read a dataset file, preserving row order.

    With ``domain_names=None`` the domains are taken from the file (every
    ``rob_*`` CSV column, or the keys of the first JSON record's ``rob``).
    """
    fmt = fmt or detect_format(path)
    if fmt == "csv":
        ids, bias, labels, names = _read_csv(Path(path), domain_names)
    elif fmt == "jsonl":
        ids, bias, labels, names = _read_jsonl(Path(path), domain_names)
    else:
        raise ParseError(f"unknown dataset format {fmt!r}")
    if not ids:
        raise ParseError(f"{path}: no data rows")
    ds = validate_dataset(bias, labels, names, Provenance("ingested", {"source": str(path)}))
    return Dataset(ds.bias, ds.labels, ds.provenance, ids)


def _read_csv(path: Path, domain_names):
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if domain_names is None:
            names = [h[len(PREFIX):] for h in header if h.startswith(PREFIX)]
            if not names:
                raise ParseError(f"{path}: no '{PREFIX}*' columns in header")
        else:
            names = list(domain_names)
        required = ["study_id", *(PREFIX + n for n in names), "association"]
        for col in required:
            if col not in header:
                raise ParseError(f"{path}: missing column {col!r}")
        pos = {h: i for i, h in enumerate(header)}
        ids, bias, labels = [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            where = f"{path}:{line}"
            ids.append(row[pos["study_id"]].strip())
            bias.append([_bias_value(row[pos[PREFIX + n]], PREFIX + n, where) for n in names])
            labels.append(_label_value(row[pos["association"]], where))
    return ids, bias, labels, names


def _read_jsonl(path: Path, domain_names):
    ids, bias, labels = [], [], []
    names = list(domain_names) if domain_names is not None else None
    with path.open() as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            where = f"{path}:{line}"
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as e:
                raise ParseError(f"{where}: invalid JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise ParseError(f"{where}: expected a JSON object")
            for key in ("study_id", "rob", "association"):
                if key not in rec:
                    raise ParseError(f"{where}: missing key {key!r}")
            rob = rec["rob"]
            if not isinstance(rob, dict):
                raise ParseError(f"{where}: 'rob' must be an object")
            if names is None:
                names = list(rob)
            for n in names:
                if n not in rob:
                    raise ParseError(f"{where}: missing column {PREFIX + n!r}")
            ids.append(str(rec["study_id"]))
            bias.append([_bias_value(rob[n], PREFIX + n, where) for n in names])
            labels.append(_label_value(rec["association"], where))
    return ids, bias, labels, names or []


def write(dataset: Dataset, path, fmt: str | None = None) -> None:
    fmt = fmt or detect_format(path)
    names = dataset.bias.domain_names
    rows = zip(dataset.ids(), dataset.bias.values.tolist(), dataset.labels.values.tolist())
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["study_id", *(PREFIX + n for n in names), "association"])
            for sid, a, y in rows:
                w.writerow([sid, *a, y])
    elif fmt == "jsonl":
        with path.open("w") as fh:
            for sid, a, y in rows:
                fh.write(json.dumps({"study_id": sid, "rob": dict(zip(names, a)), "association": y}) + "\n")
    else:
        raise ParseError(f"unknown dataset format {fmt!r}")
