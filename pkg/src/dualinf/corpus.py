"""Loading, validation, statistics and rare-disease slicing of the DDx corpus.

The dataset is a JSON Lines file, one note per line::

    {"id": "n001", "specialty": "Respiratory disease", "note": "...",
     "differentials": [{"diagnosis": "Pneumothorax", "evidence": ["Dyspnea", ...]}]}
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .text import normalize_name

__all__ = [
    "SPECIALTIES",
    "MIN_NOTE_CHARS",
    "CorpusError",
    "DifferentialEntry",
    "NoteRecord",
    "CorpusStats",
    "RareDiseaseList",
    "load_corpus",
    "parse_corpus",
    "dump_corpus",
    "save_corpus",
    "corpus_digest",
    "compute_stats",
    "filter_rare",
    "filter_specialty",
    "load_rare_list",
]

SPECIALTIES = (
    "Cardiovascular disease",
    "Digestive system disease",
    "Respiratory disease",
    "Endocrine disorder",
    "Nervous system disease",
    "Reproductive system disease",
    "Circulatory system disease",
    "Skin disease",
    "Orthopedic disease",
)
_SPECIALTY_LOOKUP = {normalize_name(s): s for s in SPECIALTIES}
# tolerate the plural used in running text ("endocrine disorders")
_SPECIALTY_LOOKUP[normalize_name("Endocrine disorders")] = "Endocrine disorder"

MIN_NOTE_CHARS = 130


class CorpusError(ValueError):
    pass


def canonical_specialty(name: str) -> str:
    try:
        return _SPECIALTY_LOOKUP[normalize_name(name)]
    except KeyError:
        raise CorpusError(f"unknown specialty {name!r}") from None


@dataclass(frozen=True)
class DifferentialEntry:
    diagnosis_name: str
    evidence: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"diagnosis": self.diagnosis_name, "evidence": list(self.evidence)}


@dataclass(frozen=True)
class NoteRecord:
    id: str
    specialty: str
    note_text: str
    differentials: tuple[DifferentialEntry, ...]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "specialty": self.specialty,
            "note": self.note_text,
            "differentials": [d.to_dict() for d in self.differentials],
        }

    @property
    def diagnosis_names(self) -> list[str]:
        return [d.diagnosis_name for d in self.differentials]


def _check_record(rec: NoteRecord) -> None:
    problems = []
    if len(rec.note_text) < MIN_NOTE_CHARS:
        problems.append(
            f"note has {len(rec.note_text)} characters, minimum is {MIN_NOTE_CHARS}"
        )
    if not rec.differentials:
        problems.append("no differentials")
    seen = set()
    for d in rec.differentials:
        key = normalize_name(d.diagnosis_name)
        if not key:
            problems.append("empty diagnosis name")
        elif key in seen:
            problems.append(f"duplicate diagnosis {d.diagnosis_name!r}")
        seen.add(key)
        if not d.evidence:
            problems.append(f"diagnosis {d.diagnosis_name!r} has no evidence")
        if any(not e.strip() for e in d.evidence):
            problems.append(f"diagnosis {d.diagnosis_name!r} has blank evidence")
        if len(set(d.evidence)) != len(d.evidence):
            problems.append(f"diagnosis {d.diagnosis_name!r} has duplicate evidence")
    if problems:
        raise CorpusError(f"note {rec.id!r}: " + "; ".join(problems))


def _field(obj: dict, name: str, kind, index: int):
    if name not in obj:
        raise CorpusError(f"record {index}: missing field {name!r}")
    value = obj[name]
    if not isinstance(value, kind):
        raise CorpusError(f"record {index}: field {name!r} has wrong type")
    return value


def _record_from_obj(obj, index: int) -> NoteRecord:
    if not isinstance(obj, dict):
        raise CorpusError(f"record {index}: expected an object")
    diffs = []
    for j, d in enumerate(_field(obj, "differentials", list, index)):
        if not isinstance(d, dict):
            raise CorpusError(f"record {index}: field 'differentials[{j}]' is not an object")
        name = _field(d, "diagnosis", str, index)
        evidence = _field(d, "evidence", list, index)
        if not all(isinstance(e, str) for e in evidence):
            raise CorpusError(f"record {index}: field 'differentials[{j}].evidence' must hold strings")
        diffs.append(DifferentialEntry(name, tuple(evidence)))
    return NoteRecord(
        id=str(_field(obj, "id", (str, int), index)),
        specialty=canonical_specialty(_field(obj, "specialty", str, index)),
        note_text=_field(obj, "note", str, index),
        differentials=tuple(diffs),
    )


def parse_corpus(text: str) -> list[NoteRecord]:
    records = []
    ids = set()
    index = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"record {index}: malformed JSON ({exc.msg})") from None
        rec = _record_from_obj(obj, index)
        _check_record(rec)
        if rec.id in ids:
            raise CorpusError(f"record {index}: duplicate id {rec.id!r}")
        ids.add(rec.id)
        records.append(rec)
        index += 1
    return records


def load_corpus(path: str | Path) -> list[NoteRecord]:
    """Read and validate a JSON Lines corpus; records come back in file order."""
    return parse_corpus(Path(path).read_text(encoding="utf-8"))


def dump_corpus(corpus) -> str:
    return "".join(
        json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for r in corpus
    )


def save_corpus(corpus, path: str | Path) -> None:
    Path(path).write_text(dump_corpus(corpus), encoding="utf-8")


def corpus_digest(corpus) -> str:
    return hashlib.sha256(dump_corpus(corpus).encode("utf-8")).hexdigest()


@dataclass
class CorpusStats:
    """Table-style corpus summary. All standard deviations are population (ddof=0)."""

    note_count: int
    note_length_mean: float
    note_length_std: float
    note_words_mean: float
    note_words_std: float
    diagnoses_per_note_mean: float
    diagnoses_per_note_std: float
    evidence_per_note_mean: float
    evidence_per_note_std: float
    evidence_per_diagnosis_mean: float
    evidence_per_diagnosis_std: float
    per_specialty_counts: dict[str, int] = field(default_factory=dict)

    @property
    def specialty_count(self) -> int:
        return sum(1 for v in self.per_specialty_counts.values() if v)


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=0))


def compute_stats(corpus) -> CorpusStats:
    corpus = list(corpus)
    if not corpus:
        raise CorpusError("cannot compute statistics of an empty corpus")
    lengths = [len(r.note_text) for r in corpus]
    words = [len(r.note_text.split()) for r in corpus]
    n_dx = [len(r.differentials) for r in corpus]
    ev_note = [sum(len(d.evidence) for d in r.differentials) for r in corpus]
    ev_dx = [len(d.evidence) for r in corpus for d in r.differentials]
    counts = Counter(r.specialty for r in corpus)
    return CorpusStats(
        len(corpus),
        *_mean_std(lengths),
        *_mean_std(words),
        *_mean_std(n_dx),
        *_mean_std(ev_note),
        *_mean_std(ev_dx),
        per_specialty_counts={s: counts[s] for s in SPECIALTIES if counts[s]},
    )


@dataclass(frozen=True)
class RareDiseaseList:
    names: frozenset[str]

    def __post_init__(self):
        normed = frozenset(n for n in (normalize_name(x) for x in self.names) if n)
        if not normed:
            raise CorpusError("rare disease list is empty")
        object.__setattr__(self, "names", normed)

    def __or__(self, other: "RareDiseaseList") -> "RareDiseaseList":
        return RareDiseaseList(self.names | other.names)

    def matches(self, diagnosis: str) -> bool:
        key = normalize_name(diagnosis)
        if key in self.names:
            return True
        # whole-entry containment on token boundaries
        padded = f" {key} "
        return any(f" {name} " in padded for name in self.names)


def load_rare_list(path: str | Path) -> RareDiseaseList:
    names = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = re.sub(r"#.*", "", line).strip()
        if line:
            names.append(line)
    return RareDiseaseList(frozenset(names))


def filter_rare(corpus, rare_list: RareDiseaseList) -> list[NoteRecord]:
    """Notes whose gold differentials involve at least one listed disease."""
    return [
        r for r in corpus if any(rare_list.matches(n) for n in r.diagnosis_names)
    ]


def filter_specialty(corpus, specialty: str) -> list[NoteRecord]:
    target = canonical_specialty(specialty)
    return [r for r in corpus if r.specialty == target]
