"""Per-note and corpus scoring of one set of predictions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..backend import Embedder, HashingEmbedder
from ..protocol import DdxPrediction
from .accuracy import AccuracyReport, Counts, _note_dx_counts, _note_interp_counts, make_matcher, match_diagnoses
from .errors import ErrorFlags, classify_error
from .meteor import SynonymTable, meteor
from .similarity import bertscore, sentence_similarity

__all__ = ["NoteScores", "MetricReport", "score_note", "evaluate_predictions", "TEXT_METRICS"]

TEXT_METRICS = ("bertscore_f1", "sentence_similarity", "meteor")
EVIDENCE_JOINER = "; "


@dataclass
class NoteScores:
    note_id: str
    specialty: str
    diagnosis: Counts
    interpretation: Counts
    meteor: float
    bertscore_f1: float
    sentence_similarity: float
    errors: list[ErrorFlags] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "note_id": self.note_id,
            "specialty": self.specialty,
            "diagnosis": self.diagnosis.to_dict(),
            "interpretation": self.interpretation.to_dict(),
            "meteor": self.meteor,
            "bertscore_f1": self.bertscore_f1,
            "sentence_similarity": self.sentence_similarity,
            "errors": [e.to_dict() for e in self.errors],
        }


def _text_scores(pairs, embedder: Embedder, synonyms) -> tuple[float, float, float]:
    """Mean over gold diagnoses; a gold diagnosis without a matched prediction scores 0."""
    m, b, s = [], [], []
    for gold, pred in pairs:
        if pred is None or not pred.evidence:
            m.append(0.0)
            b.append(0.0)
            s.append(0.0)
            continue
        cand = EVIDENCE_JOINER.join(pred.evidence)
        ref = EVIDENCE_JOINER.join(gold.evidence)
        m.append(meteor(cand, ref, synonyms=synonyms))
        b.append(bertscore(embedder.embed_tokens(cand), embedder.embed_tokens(ref))[2])
        va, vb = embedder.embed([cand, ref])
        s.append(sentence_similarity(va, vb))
    return float(np.mean(m)), float(np.mean(b)), float(np.mean(s))


def score_note(record, pred: DdxPrediction, matcher, embedder: Embedder,
               synonyms: SynonymTable | None = None, judge_backend=None,
               classify: bool = True, run_index: int = 0) -> NoteScores:
    pairs = [(g, p) for g, p, _ in match_diagnoses(record.differentials, pred, matcher)]
    met, bs, ss = _text_scores(pairs, embedder, synonyms)
    errors = []
    if classify:
        errors = [classify_error(g, p, judge_backend, matcher, record.note_text, run_index)
                  for g, p in pairs if p is not None]
    return NoteScores(record.id, record.specialty, _note_dx_counts(record, pred, matcher),
                      _note_interp_counts(record, pred, matcher), met, bs, ss, errors)


@dataclass
class MetricReport:
    per_note: dict[str, NoteScores]
    diagnostic: AccuracyReport
    interpretation: AccuracyReport

    def text_metric(self, name: str, specialty: str | None = None) -> float:
        vals = [getattr(s, name) for s in self.per_note.values()
                if specialty is None or s.specialty == specialty]
        return float(np.mean(vals)) if vals else 0.0

    def summary(self) -> dict:
        out = {
            "diagnostic_accuracy": self.diagnostic.overall.to_dict(),
            "interpretation_accuracy": self.interpretation.overall.to_dict(),
        }
        for name in TEXT_METRICS:
            out[name] = self.text_metric(name)
        return out


def evaluate_predictions(predictions, gold, matcher="exact", embedder: Embedder | None = None,
                         synonyms: SynonymTable | None = None, judge_backend=None,
                         classify: bool = True, run_index: int = 0) -> MetricReport:
    gold = list(gold)
    extra = sorted(set(predictions) - {r.id for r in gold})
    if extra:
        raise KeyError(f"predictions for unknown note ids: {extra}")
    if isinstance(matcher, str):
        matcher = make_matcher(matcher, judge_backend, run_index)
    embedder = embedder or HashingEmbedder()
    per_note = {}
    dx = AccuracyReport(Counts(), mode=matcher.mode)
    interp = AccuracyReport(Counts(), mode=matcher.mode)
    for record in gold:
        s = score_note(record, predictions.get(record.id) or DdxPrediction(), matcher, embedder,
                       synonyms, judge_backend, classify, run_index)
        per_note[record.id] = s
        for rep, c in ((dx, s.diagnosis), (interp, s.interpretation)):
            rep.per_note[record.id] = c
            rep.overall += c
            rep.per_specialty.setdefault(record.specialty, Counts())
            rep.per_specialty[record.specialty] += c
    if dx.overall.total == 0:
        raise ValueError("accuracy denominator is zero")
    return MetricReport(per_note, dx, interp)
