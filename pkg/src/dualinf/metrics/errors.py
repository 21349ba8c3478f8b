"""Three-way interpretation error typing for a matched diagnosis pair."""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass

from ..backend import BackendError, ChatBackend
from ..protocol import PromptKind, render_prompt
from .accuracy import ExactMatcher

logger = logging.getLogger(__name__)

__all__ = ["ErrorType", "ErrorFlags", "classify_error", "count_errors"]


class ErrorType(str, enum.Enum):
    MISSING_CONTENT = "missing_content"
    FACTUAL_ERROR = "factual_error"
    LOW_RELEVANCE = "low_relevance"


_VERDICTS = {"CONSISTENT", "FACTUAL_ERROR", "NOT_RELEVANT"}
_REMINDER = "Reply with exactly one token: CONSISTENT, FACTUAL_ERROR or NOT_RELEVANT."


@dataclass
class ErrorFlags:
    missing_content: bool
    factual_error: bool | None = None
    low_relevance: bool | None = None
    unclassified: bool = False

    @property
    def primary(self) -> ErrorType | None:
        for etype, flag in ((ErrorType.MISSING_CONTENT, self.missing_content),
                            (ErrorType.FACTUAL_ERROR, self.factual_error),
                            (ErrorType.LOW_RELEVANCE, self.low_relevance)):
            if flag:
                return etype
        return None

    def to_dict(self) -> dict:
        p = self.primary
        return {"missing_content": self.missing_content, "factual_error": self.factual_error,
                "low_relevance": self.low_relevance, "unclassified": self.unclassified,
                "primary": p.value if p else None}


def _parse_verdict(text: str | None) -> str | None:
    token = (text or "").strip().upper().replace(" ", "_").replace("-", "_")
    return token if token in _VERDICTS else None


def _judge_item(backend: ChatBackend, diagnosis: str, item: str, note: str | None,
                run_index: int) -> str | None:
    prompt = render_prompt(PromptKind.ERROR_CLASSIFIER, diagnosis=diagnosis, item=item, note=note)
    for user in (prompt.user_text, prompt.user_text + "\n\n" + _REMINDER):
        try:
            ex = backend.complete(backend.request(prompt.system_text, user, 0.0),
                                  run_index=run_index)
        except BackendError as exc:
            logger.warning("error classifier backend failure: %s", exc)
            return None
        verdict = _parse_verdict(ex.response_text)
        if verdict is not None:
            return verdict
    return None


def classify_error(gold_entry, predicted_entry, judge_backend: ChatBackend | None = None,
                   matcher=None, note: str | None = None, run_index: int = 0) -> ErrorFlags:
    """Flag missing content (>= 2 gold items unmatched) and, with a judge, the
    factual-error and low-relevance categories over the predicted evidence.

    Without a judge the two judge-based flags stay ``None``.
    """
    matcher = matcher or ExactMatcher()
    unmatched = sum(
        1 for item in gold_entry.evidence
        if not matcher.evidence_matched(item, predicted_entry.evidence)
    )
    flags = ErrorFlags(missing_content=unmatched >= 2)
    if judge_backend is None:
        return flags
    verdicts = []
    for item in predicted_entry.evidence:
        v = _judge_item(judge_backend, predicted_entry.name, item, note, run_index)
        if v is None:
            flags.unclassified = True
            return flags
        verdicts.append(v)
    flags.factual_error = "FACTUAL_ERROR" in verdicts
    flags.low_relevance = "NOT_RELEVANT" in verdicts
    return flags


def count_errors(flags) -> dict:
    """Multi-label counts, primary-label counts and the unclassified tally."""
    multi: Counter[str] = Counter()
    primary: Counter[str] = Counter()
    unclassified = 0
    for f in flags:
        if f.unclassified:
            unclassified += 1
        for etype, flag in ((ErrorType.MISSING_CONTENT, f.missing_content),
                            (ErrorType.FACTUAL_ERROR, f.factual_error),
                            (ErrorType.LOW_RELEVANCE, f.low_relevance)):
            if flag:
                multi[etype.value] += 1
        if f.primary is not None:
            primary[f.primary.value] += 1
    return {
        "multi_label": {e.value: multi[e.value] for e in ErrorType},
        "primary": {e.value: primary[e.value] for e in ErrorType},
        "unclassified": unclassified,
    }
