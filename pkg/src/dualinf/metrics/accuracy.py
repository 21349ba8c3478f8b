"""Diagnostic and interpretation accuracy with pluggable matchers.

Both scores use gold totals as the denominator (recall-oriented). The
precision-oriented counterpart over predicted totals is computed alongside.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..backend import BackendError, ChatBackend
from ..protocol import DdxEntry, DdxPrediction, PromptKind, render_prompt
from ..text import normalize_name

logger = logging.getLogger(__name__)

__all__ = [
    "ExactMatcher",
    "JudgeMatcher",
    "make_matcher",
    "Counts",
    "AccuracyReport",
    "match_diagnoses",
    "diagnostic_accuracy",
    "interpretation_accuracy",
]


class ExactMatcher:
    mode = "exact"

    def same_diagnosis(self, gold: str, predicted: str) -> bool | None:
        return normalize_name(gold) == normalize_name(predicted)

    def evidence_matched(self, item: str, candidates) -> bool | None:
        key = normalize_name(item)
        return any(normalize_name(c) == key for c in candidates)


class JudgeMatcher(ExactMatcher):
    """LLM-as-judge matcher. Exact-normalized agreement short-circuits the judge.

    Verdicts must be exactly ``MATCH`` or ``NO_MATCH``; anything else is retried
    once and then reported as ``None`` (a judge failure).
    """

    mode = "judge"
    REMINDER = "Reply with exactly one token: MATCH or NO_MATCH."

    def __init__(self, backend: ChatBackend, run_index: int = 0):
        self.backend = backend
        self.run_index = run_index
        self.failures = 0
        self.calls = 0
        self._memo: dict[tuple, bool | None] = {}
        self._lock = threading.Lock()

    def _verdict(self, kind: PromptKind, **ctx) -> bool | None:
        memo_key = (kind, tuple(sorted((k, str(v)) for k, v in ctx.items())))
        with self._lock:
            if memo_key in self._memo:
                return self._memo[memo_key]
        prompt = render_prompt(kind, **ctx)
        verdict = None
        for user in (prompt.user_text, prompt.user_text + "\n\n" + self.REMINDER):
            try:
                ex = self.backend.complete(self.backend.request(prompt.system_text, user, 0.0),
                                           run_index=self.run_index)
            except BackendError as exc:
                logger.warning("judge backend failure: %s", exc)
                break
            with self._lock:
                self.calls += 1
            token = (ex.response_text or "").strip().upper()
            if token in ("MATCH", "NO_MATCH"):
                verdict = token == "MATCH"
                break
        with self._lock:
            if verdict is None:
                self.failures += 1
            self._memo[memo_key] = verdict
        return verdict

    def same_diagnosis(self, gold, predicted):
        if super().same_diagnosis(gold, predicted):
            return True
        return self._verdict(PromptKind.JUDGE_DIAGNOSIS, gold=gold, predicted=predicted)

    def evidence_matched(self, item, candidates):
        candidates = list(candidates)
        if not candidates:
            return False
        if super().evidence_matched(item, candidates):
            return True
        return self._verdict(PromptKind.JUDGE_INTERPRETATION, item=item, candidates=candidates)


def make_matcher(mode: str = "exact", judge_backend: ChatBackend | None = None, run_index: int = 0):
    if mode in ("exact", "exact_normalized"):
        return ExactMatcher()
    if mode == "judge":
        if judge_backend is None:
            raise ValueError("judge match mode requires a judge backend")
        return JudgeMatcher(judge_backend, run_index)
    raise ValueError(f"unknown match mode {mode!r}")


@dataclass
class Counts:
    """Numerator/denominator pair plus the predicted-total variant and judge coverage."""

    matched: int = 0
    total: int = 0
    predicted_matched: int = 0
    predicted_total: int = 0
    judged: int = 0

    @property
    def value(self) -> float:
        return self.matched / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        return self.predicted_matched / self.predicted_total if self.predicted_total else 0.0

    @property
    def coverage(self) -> float:
        return self.judged / self.total if self.total else 1.0

    def __iadd__(self, other: "Counts") -> "Counts":
        self.matched += other.matched
        self.total += other.total
        self.predicted_matched += other.predicted_matched
        self.predicted_total += other.predicted_total
        self.judged += other.judged
        return self

    def to_dict(self) -> dict:
        return {
            "matched": self.matched,
            "total": self.total,
            "value": self.value,
            "predicted_matched": self.predicted_matched,
            "predicted_total": self.predicted_total,
            "precision": self.precision,
            "coverage": self.coverage,
        }


@dataclass
class AccuracyReport:
    overall: Counts
    per_note: dict[str, Counts] = field(default_factory=dict)
    per_specialty: dict[str, Counts] = field(default_factory=dict)
    mode: str = "exact"

    @property
    def value(self) -> float:
        return self.overall.value

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "overall": self.overall.to_dict(),
            "per_specialty": {k: v.to_dict() for k, v in self.per_specialty.items()},
        }


def match_diagnoses(gold_entries, predicted: DdxPrediction, matcher) -> list[tuple]:
    """Pair each gold differential with the first accepted prediction that matches it.

    Returns ``[(gold_entry, predicted_entry_or_None, decided)]`` where
    ``decided`` is False when a judge failure left the pairing uncertain.
    """
    accepted = predicted.accepted()
    out = []
    for g in gold_entries:
        hit, decided = None, True
        for p in accepted:
            verdict = matcher.same_diagnosis(g.diagnosis_name, p.name)
            if verdict is None:
                decided = False
            elif verdict:
                hit, decided = p, True
                break
        out.append((g, hit, decided))
    return out


def _check_ids(predictions: Mapping, gold_ids: set) -> None:
    extra = sorted(set(predictions) - gold_ids)
    if extra:
        raise KeyError(f"predictions for unknown note ids: {extra}")


def _note_dx_counts(record, pred: DdxPrediction, matcher) -> Counts:
    pairs = match_diagnoses(record.differentials, pred, matcher)
    c = Counts(total=len(pairs))
    c.matched = sum(1 for _, p, _ in pairs if p is not None)
    c.judged = sum(1 for _, p, d in pairs if d)
    accepted = pred.accepted()
    c.predicted_total = len(accepted)
    c.predicted_matched = sum(
        1 for p in accepted
        if any(matcher.same_diagnosis(g.diagnosis_name, p.name) for g in record.differentials)
    )
    return c


def _note_interp_counts(record, pred: DdxPrediction, matcher) -> Counts:
    c = Counts()
    for g, p, _ in match_diagnoses(record.differentials, pred, matcher):
        c.total += len(g.evidence)
        if p is None:
            c.judged += len(g.evidence)
            continue
        for item in g.evidence:
            verdict = matcher.evidence_matched(item, p.evidence)
            if verdict is not None:
                c.judged += 1
            if verdict:
                c.matched += 1
        c.predicted_total += len(p.evidence)
        c.predicted_matched += sum(
            1 for item in p.evidence if matcher.evidence_matched(item, g.evidence)
        )
    return c


def _score(predictions, gold: Iterable, matcher, note_fn) -> AccuracyReport:
    gold = list(gold)
    _check_ids(predictions, {r.id for r in gold})
    if isinstance(matcher, str):
        matcher = make_matcher(matcher)
    report = AccuracyReport(Counts(), mode=matcher.mode)
    for record in gold:
        pred = predictions.get(record.id) or DdxPrediction()
        c = note_fn(record, pred, matcher)
        report.per_note[record.id] = c
        report.overall += c
        report.per_specialty.setdefault(record.specialty, Counts())
        report.per_specialty[record.specialty] += c
    if report.overall.total == 0:
        raise ValueError("accuracy denominator is zero")
    return report


def diagnostic_accuracy(predictions: Mapping[str, DdxPrediction], gold, matcher="exact") -> AccuracyReport:
    """Share of gold diagnoses matched by at least one accepted prediction.

    Notes in ``gold`` with no prediction count as fully missed.
    """
    return _score(predictions, gold, matcher, _note_dx_counts)


def interpretation_accuracy(predictions: Mapping[str, DdxPrediction], gold, matcher="exact") -> AccuracyReport:
    """Share of gold evidence items recovered under the matching predicted diagnosis."""
    return _score(predictions, gold, matcher, _note_interp_counts)


def paired_evidence(record, pred: DdxPrediction, matcher) -> list[tuple[DdxEntry | None, object]]:
    return [(p, g) for g, p, _ in match_diagnoses(record.differentials, pred, matcher)]
