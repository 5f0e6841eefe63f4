"""Data model and file I/O for training corpora and gendered-evaluation sets.

Two file families live here:

* training corpora: ``jsonl-v1`` (one JSON object per line) or ``tsv-v1``
  (header row, same column names) holding utterance tuples of
  (audio ref, English transcript, translation, speaker gender);
* MuST-SHE-style evaluation TSVs (``mustshe-v1``) annotating each sentence
  with (correct, wrong) gender-term pairs, a bias category and a dev/test
  label.

Loading never silently drops rows: rows that fail validation are collected
into a rejection report alongside the accepted records, and a file where more
than half the rows fail is treated as a schema mismatch and rejected outright.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

CORPUS_SCHEMAS = ("jsonl-v1", "tsv-v1")

CORPUS_FIELDS = ("id", "audio_ref", "transcript", "translation", "lang",
                 "speaker_gender", "duration_s")

MUSTSHE_COLUMNS = ("ID", "SRC", "REF", "WRONG-REF", "GENDER", "CATEGORY",
                   "GENDERTERMS", "SET")


class CorpusError(Exception):
    """Raised when a corpus or evaluation file cannot be ingested."""


class SchemaMismatchError(CorpusError):
    """Raised when a file rejects so many rows the schema must be wrong."""


class Gender(str, Enum):
    MALE = "male"
    FEMALE = "female"
    UNKNOWN = "unknown"


class GenderForm(str, Enum):
    MASCULINE = "masculine"
    FEMININE = "feminine"
    NEUTRAL = "neutral"


class Lang(str, Enum):
    ES = "es"
    IT = "it"


class Category(str, Enum):
    C1M = "1M"
    C1F = "1F"
    C2M = "2M"
    C2F = "2F"

    @property
    def group(self) -> int:
        """1 for speaker-gender bias, 2 for textual-cue bias."""
        return int(self.value[0])

    @property
    def form_gender(self) -> Gender:
        return Gender.MALE if self.value[1] == "M" else Gender.FEMALE


class Split(str, Enum):
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class Utterance:
    """One (audio ref, English transcript, translation, speaker gender) tuple."""

    id: str
    transcript: str
    translation: str
    lang: Lang
    speaker_gender: Gender
    audio_ref: str | None = None
    duration_s: float | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("empty id")
        if not self.transcript.strip():
            raise ValueError("empty transcript")
        if not self.translation.strip():
            raise ValueError("empty translation")
        if self.duration_s is not None and self.duration_s < 0:
            raise ValueError("negative duration_s")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "audio_ref": self.audio_ref,
            "transcript": self.transcript,
            "translation": self.translation,
            "lang": self.lang.value,
            "speaker_gender": self.speaker_gender.value,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Utterance":
        for key in ("id", "transcript", "translation", "lang", "speaker_gender"):
            if key not in obj:
                raise ValueError(f"missing field '{key}'")
        duration = obj.get("duration_s")
        return cls(
            id=str(obj["id"]),
            audio_ref=obj.get("audio_ref") or None,
            transcript=str(obj["transcript"]),
            translation=str(obj["translation"]),
            lang=Lang(str(obj["lang"]).lower()),
            speaker_gender=Gender(str(obj["speaker_gender"]).lower()),
            duration_s=None if duration is None or duration == "" else float(duration),
        )


@dataclass(frozen=True)
class GenderTermPair:
    """An annotated gender-marked term: the correct form and its swap."""

    correct: str
    wrong: str

    def __post_init__(self):
        if not self.correct or not self.wrong:
            raise ValueError("empty term in gender-term pair")
        if self.correct == self.wrong:
            raise ValueError(f"degenerate gender-term pair '{self.correct}'")


@dataclass(frozen=True)
class MustSheRecord:
    id: str
    src: str
    ref: str
    wrong_ref: str
    speaker_gender: Gender
    category: Category
    terms: tuple[GenderTermPair, ...]
    split: Split

    def __post_init__(self):
        if not self.terms:
            raise ValueError(f"record '{self.id}' has no gender-term annotations")


@dataclass(frozen=True)
class RejectedRow:
    row: int
    reason: str


@dataclass
class LoadResult:
    """Accepted records plus the rejection report for one input file."""

    records: list[Utterance] = field(default_factory=list)
    rejects: list[RejectedRow] = field(default_factory=list)

    @property
    def total_rows(self) -> int:
        return len(self.records) + len(self.rejects)


def _utterance_from_row(obj: Mapping, seen_ids: set[str]) -> Utterance:
    utt = Utterance.from_dict(obj)
    if utt.id in seen_ids:
        raise ValueError(f"duplicate id '{utt.id}'")
    return utt


def _iter_jsonl_rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, line


def load_corpus(path: str | Path, schema: str = "jsonl-v1") -> LoadResult:
    """Load a training corpus, collecting invalid rows into a rejection report.

    Blank lines are not counted as rows. Raises SchemaMismatchError when more
    than half the rows fail validation, which almost always means the wrong
    schema id was passed.
    """
    if schema not in CORPUS_SCHEMAS:
        raise ValueError(f"unknown corpus schema '{schema}' (expected one of {CORPUS_SCHEMAS})")
    path = Path(path)

    result = LoadResult()
    seen: set[str] = set()

    if schema == "jsonl-v1":
        for lineno, line in _iter_jsonl_rows(path):
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("row is not a JSON object")
                utt = _utterance_from_row(obj, seen)
            except (ValueError, TypeError) as exc:
                result.rejects.append(RejectedRow(lineno, str(exc)))
                continue
            seen.add(utt.id)
            result.records.append(utt)
    else:  # tsv-v1
        import csv

        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh, dialect="excel-tab")
            if reader.fieldnames is None:
                raise CorpusError(f"{path}: empty TSV, no header row")
            for lineno, row in enumerate(reader, 2):
                try:
                    utt = _utterance_from_row(row, seen)
                except (ValueError, TypeError) as exc:
                    result.rejects.append(RejectedRow(lineno, str(exc)))
                    continue
                seen.add(utt.id)
                result.records.append(utt)

    if result.total_rows and 2 * len(result.rejects) > result.total_rows:
        sample = "; ".join(f"row {r.row}: {r.reason}" for r in result.rejects[:3])
        raise SchemaMismatchError(
            f"{path}: {len(result.rejects)}/{result.total_rows} rows rejected "
            f"(schema '{schema}' looks wrong; first reasons: {sample})"
        )
    return result


def parse_term_pairs(cell: str, pair_sep: str = ">", list_sep: str = ";") -> tuple[GenderTermPair, ...]:
    pairs = []
    for chunk in cell.split(list_sep):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [p.strip() for p in chunk.split(pair_sep)]
        if len(parts) != 2 or not all(parts):
            raise ValueError(f"unparseable gender-term pair '{chunk}'")
        pairs.append(GenderTermPair(correct=parts[0], wrong=parts[1]))
    if not pairs:
        raise ValueError("empty gender-term cell")
    return tuple(pairs)


_GENDER_ALIASES = {
    "male": Gender.MALE, "m": Gender.MALE, "he": Gender.MALE,
    "female": Gender.FEMALE, "f": Gender.FEMALE, "she": Gender.FEMALE,
    "unknown": Gender.UNKNOWN,
}


def load_mustshe(
    path: str | Path,
    *,
    columns: Mapping[str, str] | None = None,
    pair_sep: str = ">",
    list_sep: str = ";",
) -> list[MustSheRecord]:
    """Load a MuST-SHE-style TSV.

    ``columns`` remaps required column names onto whatever a particular
    release uses (keys are our canonical names, values the file's); header
    matching is case-insensitive and extra columns are ignored. ``pair_sep``
    separates the correct form from the wrong form inside a cell and
    ``list_sep`` separates pairs.
    """
    import csv

    path = Path(path)
    wanted = {name: (columns or {}).get(name, name) for name in MUSTSHE_COLUMNS}

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, dialect="excel-tab")
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"{path}: empty file, expected a header row") from None
        index = {name.strip().upper(): i for i, name in enumerate(header)}
        col_idx = {}
        for canonical, actual in wanted.items():
            key = actual.strip().upper()
            if key not in index:
                raise CorpusError(f"{path}: missing required column '{actual}'")
            col_idx[canonical] = index[key]

        records = []
        for lineno, row in enumerate(reader, 2):
            if not any(cell.strip() for cell in row):
                continue

            def cell(name: str) -> str:
                i = col_idx[name]
                return row[i].strip() if i < len(row) else ""

            gender = _GENDER_ALIASES.get(cell("GENDER").lower())
            if gender is None:
                raise CorpusError(f"{path} row {lineno}: unknown gender '{cell('GENDER')}'")
            try:
                category = Category(cell("CATEGORY").upper())
            except ValueError:
                raise CorpusError(
                    f"{path} row {lineno}: unknown category '{cell('CATEGORY')}'"
                ) from None
            try:
                terms = parse_term_pairs(cell("GENDERTERMS"), pair_sep, list_sep)
            except ValueError as exc:
                raise CorpusError(f"{path} row {lineno}: {exc}") from None
            split = Split.DEV if cell("SET").lower() == "dev" else Split.TEST
            records.append(MustSheRecord(
                id=cell("ID"),
                src=cell("SRC"),
                ref=cell("REF"),
                wrong_ref=cell("WRONG-REF"),
                speaker_gender=gender,
                category=category,
                terms=terms,
                split=split,
            ))
    return records


def write_corpus(records: Iterable, path: str | Path) -> None:
    """Write records (anything with ``to_dict``) as JSONL.

    One record per line with the record's own key order, trailing newline per
    line; an empty record list produces an empty (0-byte) file. Output is
    byte-deterministic for equal inputs.
    """
    lines = [json.dumps(rec.to_dict(), ensure_ascii=False) for rec in records]
    text = "".join(line + "\n" for line in lines)
    Path(path).write_text(text, encoding="utf-8")


def load_utterances(path: str | Path) -> list[Utterance]:
    """Strict loader for utterance JSONL written by this package (no report)."""
    out = []
    for lineno, line in _iter_jsonl_rows(Path(path)):
        try:
            out.append(Utterance.from_dict(json.loads(line)))
        except (ValueError, TypeError) as exc:
            raise CorpusError(f"{path} row {lineno}: {exc}") from None
    return out


def load_targets(path: str | Path):
    """Load fine-tuning target records written by ``write_corpus``."""
    from .selection import TargetRecord

    out = []
    for lineno, line in _iter_jsonl_rows(Path(path)):
        try:
            out.append(TargetRecord.from_dict(json.loads(line)))
        except (ValueError, TypeError) as exc:
            raise CorpusError(f"{path} row {lineno}: {exc}") from None
    return out
