"""Corpus ingestion: case documents, charge lexicon, tokenization, trial years.

Input formats:
  corpus  -- JSONL, one object per line: {"id": str, "text": str, "role": "query"|"candidate"?}
             (or a directory of text files; file name -> id, body -> text)
  labels  -- JSON object: query id -> list of relevant candidate ids
  charges -- plain text (one charge name per line) or JSONL {"id": ..., "name": ...}
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    EmptyLexiconError,
    IngestError,
    LabelResolutionError,
    ParseError,
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_MONTHS = (
    "january february march april may june july august september october november december"
).split()
_MONTH_ALT = "|".join(_MONTHS)

# Date patterns scanned by extract_latest_year. Year plausibility windows:
# explicit dates accept [1000, 9999]; month-adjacent bare years are
# restricted to [1850, 2100] to avoid picking up citation numbers.
_DATE_PATTERNS = (
    # "January 5, 2010" / "january 5 2010"
    re.compile(rf"\b(?:{_MONTH_ALT})\s+\d{{1,2}}(?:st|nd|rd|th)?\s*,?\s+(\d{{4}})\b"),
    # "5 January 2010"
    re.compile(rf"\b\d{{1,2}}(?:st|nd|rd|th)?\s+(?:{_MONTH_ALT})\s*,?\s+(\d{{4}})\b"),
    # ISO 8601 date
    re.compile(r"\b(\d{4})-\d{2}-\d{2}\b"),
    # neutral-citation year "[2010]"
    re.compile(r"\[(\d{4})\]"),
)
# bare year directly following a month name ("March 2010")
_MONTH_YEAR_RE = re.compile(rf"\b(?:{_MONTH_ALT})\s*,?\s+(\d{{4}})\b")


class Role(enum.Enum):
    QUERY = "query"
    CANDIDATE = "candidate"


@dataclass(frozen=True)
class CaseDocument:
    """One legal case: raw text plus derived tokens, year, and query/candidate role."""

    id: str
    text: str
    tokens: tuple[str, ...]
    year: int | None
    role: Role


@dataclass(frozen=True)
class ChargeEntry:
    """A charge name from the lexicon; embedding is attached later if at all."""

    id: str
    name: str
    embedding: tuple[float, ...] | None = None


@dataclass(frozen=True)
class CorpusStore:
    """Immutable corpus: case order then charge order define the canonical node order."""

    cases: tuple[CaseDocument, ...]
    charges: tuple[ChargeEntry, ...] = ()
    labels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def n_cases(self) -> int:
        return len(self.cases)

    @property
    def n_charges(self) -> int:
        return len(self.charges)

    def case_index(self) -> dict[str, int]:
        return {c.id: i for i, c in enumerate(self.cases)}

    def queries(self) -> tuple[CaseDocument, ...]:
        return tuple(c for c in self.cases if c.role is Role.QUERY)

    def candidates(self) -> tuple[CaseDocument, ...]:
        return tuple(c for c in self.cases if c.role is Role.CANDIDATE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def extract_latest_year(text: str) -> int | None:
    """Return the largest plausible year mentioned in ``text``, or None.

    Recognizes long-form English dates, ISO dates, bracketed citation years,
    and bare years adjacent to month names.
    """
    lowered = text.lower()
    years: list[int] = []
    for pat in _DATE_PATTERNS:
        for m in pat.finditer(lowered):
            y = int(m.group(1))
            if 1000 <= y <= 9999:
                years.append(y)
    for m in _MONTH_YEAR_RE.finditer(lowered):
        y = int(m.group(1))
        if 1850 <= y <= 2100:
            years.append(y)
    return max(years) if years else None


def load_labels(path: str | Path) -> dict[str, tuple[str, ...]]:
    """Load a labels file: JSON object mapping query id -> relevant candidate ids."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise IngestError(f"labels file {path} must contain a JSON object")
    labels: dict[str, tuple[str, ...]] = {}
    for qid, rel in raw.items():
        if not isinstance(rel, list):
            raise IngestError(f"labels for {qid!r} must be a list of ids")
        labels[str(qid)] = tuple(str(r) for r in rel)
    return labels


def _iter_corpus_records(corpus_path: Path) -> Iterable[tuple[int, dict]]:
    """Yield (line_number, record) pairs from a JSONL file or a text directory."""
    if corpus_path.is_dir():
        for i, p in enumerate(sorted(corpus_path.iterdir()), start=1):
            if p.is_file():
                yield i, {"id": p.name, "text": p.read_text(encoding="utf-8")}
        return
    with open(corpus_path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_number=i) from exc
            if not isinstance(rec, dict):
                raise ParseError("corpus line must be a JSON object", line_number=i)
            yield i, rec


def ingest_corpus(
    corpus_path: str | Path,
    labels_path: str | Path | None = None,
) -> CorpusStore:
    """Read a corpus file (JSONL or directory) into an immutable CorpusStore.

    Roles: an explicit "role" field wins; otherwise ids on the query side of
    the labels file become queries and everything else is a candidate.
    """
    corpus_path = Path(corpus_path)
    labels = load_labels(labels_path) if labels_path is not None else {}

    cases: list[CaseDocument] = []
    seen: set[str] = set()
    for line_no, rec in _iter_corpus_records(corpus_path):
        if "id" not in rec or "text" not in rec:
            raise ParseError("missing required field 'id' or 'text'", line_number=line_no)
        cid = str(rec["id"])
        if not cid:
            raise ParseError("empty id", line_number=line_no)
        text = str(rec["text"])
        if cid in seen:
            raise IngestError(f"duplicate case id {cid!r}")
        seen.add(cid)

        explicit = rec.get("role")
        if explicit is not None:
            try:
                role = Role(str(explicit).lower())
            except ValueError:
                raise ParseError(f"unknown role {explicit!r}", line_number=line_no)
        elif cid in labels:
            role = Role.QUERY
        else:
            role = Role.CANDIDATE

        cases.append(
            CaseDocument(
                id=cid,
                text=text,
                tokens=tuple(tokenize(text)),
                year=extract_latest_year(text),
                role=role,
            )
        )

    known = {c.id for c in cases}
    for qid, rel in labels.items():
        if qid not in known:
            raise LabelResolutionError(f"label query id {qid!r} not in corpus")
        for rid in rel:
            if rid not in known:
                raise LabelResolutionError(
                    f"label for query {qid!r} references unknown id {rid!r}"
                )

    return CorpusStore(cases=tuple(cases), labels=labels)


def normalize_charge_name(name: str) -> str:
    """Lowercase and collapse internal whitespace; used for matching and dedup."""
    return " ".join(name.lower().split())


def load_charge_lexicon(path: str | Path) -> tuple[ChargeEntry, ...]:
    """Load the charge lexicon: plain text (one name per line) or JSONL {"id","name"}."""
    path = Path(path)
    entries: list[ChargeEntry] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("{"):
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line_number=i) from exc
                cid = str(rec.get("id", f"charge_{len(entries)}"))
                name = rec.get("name")
                if name is None:
                    raise ParseError("charge record missing 'name'", line_number=i)
                name = str(name)
            else:
                cid = f"charge_{len(entries)}"
                name = line
            name = " ".join(name.split())
            if not name:
                raise ParseError("empty charge name", line_number=i)
            key = normalize_charge_name(name)
            if key in seen:
                raise IngestError(f"duplicate charge name {name!r}")
            seen.add(key)
            entries.append(ChargeEntry(id=cid, name=name))
    if not entries:
        raise EmptyLexiconError(f"charge lexicon {path} is empty")
    return tuple(entries)


def attach_charges(store: CorpusStore, charges: Sequence[ChargeEntry]) -> CorpusStore:
    """Return a new store with the charge lexicon attached in canonical order."""
    return CorpusStore(cases=store.cases, charges=tuple(charges), labels=store.labels)
