"""Loaders for LIAR-style TSV and RAWFC-style JSON corpora, plus a JSONL
interchange format and seeded demonstration sampling."""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    InsufficientPool,
    IoFailure,
    LabelNotInScheme,
    MalformedLine,
    MalformedRecord,
    MalformedRow,
    UnknownLabel,
)
from .model import LIAR, RAWFC, Claim, LabelScheme

SPLITS = ("train", "val", "test")

LIAR_COLUMNS = (
    "id", "label", "statement", "subject", "speaker", "job_title", "state", "party",
    "barely_true_counts", "false_counts", "half_true_counts", "mostly_true_counts",
    "pants_on_fire_counts", "context",
)
# file names in the published release
LIAR_FILES = {"train": "train.tsv", "val": "valid.tsv", "test": "test.tsv"}

RAWFC_FIELDS = {"id": "event_id", "text": "claim", "label": "label"}


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    scheme: LabelScheme
    split: str
    path: Path

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        expected = {"liar": LIAR, "rawfc": RAWFC}.get(self.name)
        if expected is not None and self.scheme != expected:
            raise ValueError(f"dataset {self.name!r} uses the {expected.name} scheme")

    def load(self) -> list[Claim]:
        if self.name == "liar":
            return load_liar(self.path, self.split)
        if self.name == "rawfc":
            return load_rawfc(self.path, self.split)
        return import_jsonl(self.path, self.scheme)


def _check_split(split: str) -> None:
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")


def _gold(scheme: LabelScheme, value: str, where: str):
    try:
        return scheme.label(value.strip())
    except LabelNotInScheme:
        raise UnknownLabel(f"{where}: label {value!r} is not in {list(scheme.labels)}") from None


def load_liar(path: str | Path, split: str) -> list[Claim]:
    """Read one LIAR split from a TSV file or from the directory holding it."""
    _check_split(split)
    path = Path(path)
    if path.is_dir():
        path = path / LIAR_FILES[split]
    try:
        fh = path.open(encoding="utf-8", newline="")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    claims = []
    with fh:
        # statements contain stray quote characters; the format has no quoting
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        for row_no, row in enumerate(reader, start=1):
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) < 3 or not row[0].strip() or not row[2].strip():
                raise MalformedRow(f"{path.name} row {row_no}: expected id, label, statement")
            gold = _gold(LIAR, row[1], f"{path.name} row {row_no}")
            meta = {col: row[i] for i, col in enumerate(LIAR_COLUMNS[3:], start=3) if i < len(row)}
            claims.append(Claim(row[0].strip(), row[2].strip(), gold, meta))
    return claims


def load_rawfc(path: str | Path, split: str,
               field_map: Mapping[str, str] | None = None) -> list[Claim]:
    """Read a RAWFC split: a directory of per-claim JSON records.

    ``path`` may be the dataset root (containing ``train/``, ``val/``,
    ``test/``) or the split directory itself. ``field_map`` maps ``id``,
    ``text`` and ``label`` to the record keys of a given release.
    """
    _check_split(split)
    fields = {**RAWFC_FIELDS, **(field_map or {})}
    root = Path(path)
    folder = root / split if (root / split).is_dir() else root
    if not folder.is_dir():
        raise IoFailure(f"not a directory: {folder}")
    claims = []
    for file in sorted(folder.glob("*.json")):
        try:
            record = json.loads(file.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise MalformedRecord(f"{file.name}: {exc}") from exc
        if not isinstance(record, dict):
            raise MalformedRecord(f"{file.name}: record is not an object")
        missing = [k for k in ("id", "text", "label") if record.get(fields[k]) in (None, "")]
        if missing:
            raise MalformedRecord(f"{file.name}: missing {', '.join(fields[k] for k in missing)}")
        gold = _gold(RAWFC, str(record[fields["label"]]), file.name)
        meta = {k: str(v) for k, v in record.items()
                if k not in fields.values() and isinstance(v, (str, int, float))}
        claims.append(Claim(str(record[fields["id"]]), str(record[fields["text"]]).strip(), gold, meta))
    return claims


# --------------------------------------------------------------------------
# JSONL interchange


def export_jsonl(claims: Iterable[Claim], path: str | Path) -> Path:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for claim in claims:
                fh.write(json.dumps(claim.to_dict(), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def import_jsonl(path: str | Path, scheme: LabelScheme) -> list[Claim]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    claims = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            claims.append(Claim.from_dict(data, scheme))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedLine(f"{path.name} line {n}: {exc}") from exc
    return claims


# --------------------------------------------------------------------------
# demonstration sampling


@dataclass(frozen=True)
class DemoSelection:
    claims: tuple[Claim, ...]
    seed: int

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.claims]

    def provenance(self) -> dict[str, Any]:
        return {"ids": self.ids, "seed": self.seed, "k": len(self.claims)}


def select_demos(train_claims: Sequence[Claim], k: int, seed: int) -> DemoSelection:
    """Seeded sample of ``k`` training claims; provenance records ids and seed."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > len(train_claims):
        raise InsufficientPool(f"cannot pick {k} demos from a pool of {len(train_claims)}")
    picked = random.Random(seed).sample(list(train_claims), k)
    return DemoSelection(tuple(picked), seed)


def class_counts(claims: Iterable[Claim], scheme: LabelScheme) -> dict[str, int]:
    counts = {label: 0 for label in scheme.labels}
    for c in claims:
        if c.gold is not None:
            counts[c.gold.value] += 1
    return counts
