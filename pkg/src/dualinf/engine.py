"""Bidirectional-inference control loop and its ablation variants.

One iteration is forward inference (note -> diagnoses with evidence), backward
inference (diagnoses -> recalled findings), and examination (prune and
supplement evidence, then flag diagnoses with fewer than ``beta`` items).
Flagged diagnoses are fed back to forward inference until none remain or
``max_iterations`` is reached.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping

from .backend import ChatBackend, ChatExchange, DEFAULT_TEMPERATURE
from .protocol import (
    FEEDBACK_MARKER,
    FORMAT_REMINDER,
    DdxEntry,
    DdxPrediction,
    PromptKind,
    Status,
    UnparseableOutput,
    parse_ddx_output,
    parse_recall_output,
    render_prompt,
)
from .text import dedupe, normalize_name

logger = logging.getLogger(__name__)

__all__ = [
    "Variant",
    "PipelineConfig",
    "ExaminationOutcome",
    "Feedback",
    "IterationRecord",
    "PipelineTrace",
    "ExchangeLog",
    "ask",
    "recall",
    "examine",
    "build_feedback",
    "run_pipeline",
]


class Variant(str, enum.Enum):
    DUAL_INF = "dual_inf"
    FI = "fi"
    FI_EM_STAR = "fi_em_star"
    FI_EM = "fi_em"
    DUAL_INF_STAR = "dual_inf_star"

    @property
    def examines(self) -> bool:
        return self is not Variant.FI

    @property
    def recalls(self) -> bool:
        return self in (Variant.DUAL_INF, Variant.DUAL_INF_STAR)

    @property
    def reflects(self) -> bool:
        return self in (Variant.DUAL_INF, Variant.FI_EM)


ROLES = ("forward", "backward", "examination")


@dataclass(frozen=True)
class PipelineConfig:
    beta: int = 3
    max_iterations: int = 5
    variant: Variant = Variant.DUAL_INF
    temperature: float = DEFAULT_TEMPERATURE
    max_output: int = 2048

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def effective_iterations(self) -> int:
        return self.max_iterations if self.variant.reflects else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


class ExchangeLog:
    """Collects the exchanges of one note, minus timing and cache flags."""

    def __init__(self, run_index: int = 0):
        self.run_index = run_index
        self.items: list[dict] = []

    def add(self, kind: str, exchange: ChatExchange) -> None:
        self.items.append({
            "kind": kind,
            "key": exchange.key,
            "digest": exchange.request.prompt_digest,
            "response_digest": hashlib.sha256(
                (exchange.response_text or "").encode("utf-8")).hexdigest()[:16],
        })


def ask(backend: ChatBackend, kind: PromptKind, parser, log: ExchangeLog | None = None,
        temperature: float = DEFAULT_TEMPERATURE, max_output: int = 2048,
        path_index: int | None = None, retry: bool = True, **ctx):
    """Render, call, parse; on a parse failure retry once with a format reminder.

    Returns ``(parsed, raw_text)``; raises :class:`UnparseableOutput` when the
    retry fails too.
    """
    prompt = render_prompt(kind, **ctx)
    run_index = log.run_index if log is not None else 0
    req = backend.request(prompt.system_text, prompt.user_text, temperature, max_output)
    ex = backend.complete(req, path_index=path_index, run_index=run_index)
    if log is not None:
        log.add(kind.value, ex)
    try:
        return parser(ex.response_text), ex.response_text
    except UnparseableOutput:
        if not retry:
            raise
    req = backend.request(prompt.system_text, prompt.user_text + "\n\n" + FORMAT_REMINDER,
                          temperature, max_output)
    ex = backend.complete(req, path_index=path_index, run_index=run_index)
    if log is not None:
        log.add(kind.value + ":retry", ex)
    return parser(ex.response_text), ex.response_text


@dataclass
class ExaminationOutcome:
    revised: DdxPrediction
    low_confidence: list[str]
    warning: str | None = None

    def to_dict(self) -> dict:
        return {"revised": self.revised.to_dict(), "low_confidence": list(self.low_confidence),
                "warning": self.warning}


@dataclass
class Feedback:
    """Names of rejected diagnoses plus their surviving evidence counts."""

    items: list[tuple[str, int]]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.items]

    def render(self) -> str:
        lines = [FEEDBACK_MARKER]
        for name, count in self.items:
            noun = "item" if count == 1 else "items"
            lines.append(f"- {name} (only {count} supporting evidence {noun})")
        lines.append("These diagnoses lacked sufficient supporting evidence. Think twice: "
                     "reconsider each of them and either support it with more evidence from "
                     "the note or replace it with a better-supported diagnosis.")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"items": [[n, c] for n, c in self.items]}

    def __bool__(self) -> bool:
        return bool(self.items)


def build_feedback(low_confidence, outcome: ExaminationOutcome | None = None) -> Feedback:
    names = dedupe(list(low_confidence))
    if not names:
        raise ValueError("feedback needs at least one low-confidence diagnosis")
    items = []
    for name in names:
        entry = outcome.revised.find(name) if outcome is not None else None
        items.append((name, len(entry.evidence) if entry is not None else 0))
    return Feedback(items)


def recall(diagnoses: list[str], backend: ChatBackend, log: ExchangeLog | None = None,
           temperature: float = DEFAULT_TEMPERATURE) -> dict[str, list[str]]:
    """Backward inference. Output covers exactly ``diagnoses`` (missing -> empty list)."""
    try:
        parsed, _ = ask(backend, PromptKind.BACKWARD, parse_recall_output, log,
                        temperature, diagnoses=diagnoses)
    except UnparseableOutput:
        logger.warning("backward inference unparseable; continuing without recalled knowledge")
        parsed = {}
    by_key = {normalize_name(k): v for k, v in parsed.items()}
    return {name: list(by_key.get(normalize_name(name), [])) for name in diagnoses}


def _source_of(item: str, forward: DdxEntry | None, recalled_items: list[str]) -> str:
    key = normalize_name(item)
    if forward is not None and key in {normalize_name(e) for e in forward.evidence}:
        return "forward"
    if key in {normalize_name(r) for r in recalled_items}:
        return "recalled"
    return "note"


def examine(note: str, forward_pred: DdxPrediction, recalled: Mapping[str, list[str]] | None,
            backend: ChatBackend, beta: int = 3, log: ExchangeLog | None = None,
            temperature: float = DEFAULT_TEMPERATURE) -> ExaminationOutcome:
    """Ask the examiner to prune and supplement evidence, then apply the beta rule locally.

    The revised prediction keeps exactly the forward diagnoses, in forward
    order; a diagnosis the examiner drops is kept with no evidence.
    """
    recalled = dict(recalled or {})
    warning = None
    try:
        revised_raw, _ = ask(backend, PromptKind.EXAMINATION, parse_ddx_output, log, temperature,
                             note=note, forward=forward_pred, recalled=recalled,
                             allow_no_recall=True)
    except UnparseableOutput:
        warning = "examination output unparseable after retry; forward prediction kept"
        revised_raw = forward_pred.copy()

    recalled_by_key = {normalize_name(k): v for k, v in recalled.items()}
    entries = []
    low = []
    for fwd in forward_pred.entries:
        got = revised_raw.find(fwd.name)
        evidence = list(got.evidence) if got is not None else []
        rec_items = recalled_by_key.get(fwd.key, [])
        sources = [_source_of(e, fwd, rec_items) for e in evidence]
        confident = len(evidence) >= beta
        entries.append(DdxEntry(fwd.name, evidence,
                                Status.ACCEPTED if confident else Status.LOW_CONFIDENCE,
                                fwd.born_iteration, sources))
        if not confident:
            low.append(fwd.name)
    return ExaminationOutcome(DdxPrediction(entries), low, warning)


@dataclass
class IterationRecord:
    iteration: int
    forward: DdxPrediction
    recalled: dict[str, list[str]] | None = None
    examination: ExaminationOutcome | None = None
    # payload sent to the next iteration's forward call; empty if none sent
    feedback: Feedback = field(default_factory=lambda: Feedback([]))

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "forward": self.forward.to_dict(),
            "recalled": self.recalled,
            "examination": self.examination.to_dict() if self.examination else None,
            "feedback": self.feedback.to_dict(),
        }


@dataclass
class PipelineTrace:
    note_id: str
    config: PipelineConfig
    iterations: list[IterationRecord] = field(default_factory=list)
    final: DdxPrediction = field(default_factory=DdxPrediction)
    status: str = "ok"
    error: str | None = None
    warnings: list[str] = field(default_factory=list)
    exchanges: list[dict] = field(default_factory=list)

    @property
    def iterations_used(self) -> int:
        return len(self.iterations)

    def to_dict(self) -> dict:
        return {
            "note_id": self.note_id,
            "method": "dual-inf",
            "config": self.config.to_dict(),
            "iterations_used": self.iterations_used,
            "iterations": [r.to_dict() for r in self.iterations],
            "final": self.final.to_dict(),
            "status": self.status,
            "error": self.error,
            "warnings": list(self.warnings),
            "exchanges": list(self.exchanges),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=1)


def _backend_for(backends, role: str) -> ChatBackend:
    if isinstance(backends, ChatBackend):
        return backends
    return backends[role]


def run_pipeline(note, config: PipelineConfig, backends, run_index: int = 0) -> PipelineTrace:
    """Run one note through the configured variant.

    ``backends`` is a single :class:`ChatBackend` or a mapping with keys
    ``forward``, ``backward`` and ``examination``. Backend errors propagate;
    unparseable forward output marks the trace failed.
    """
    log = ExchangeLog(run_index)
    trace = PipelineTrace(note.id, config)
    variant = config.variant
    t = config.temperature

    accepted: dict[str, DdxEntry] = {}
    # latest unresolved low-confidence version of each never-accepted diagnosis
    pending: dict[str, DdxEntry] = {}
    feedback = Feedback([])

    for it in range(1, config.effective_iterations + 1):
        try:
            forward, _ = ask(_backend_for(backends, "forward"), PromptKind.FORWARD,
                             parse_ddx_output, log, t, config.max_output, note=note.note_text,
                             feedback=feedback or None,
                             accepted=[e.name for e in accepted.values()])
        except UnparseableOutput as exc:
            trace.status = "failed"
            trace.error = f"iteration {it}: forward output unparseable after retry"
            logger.warning("note %s: %s (%d chars)", note.id, trace.error, len(exc.text or ""))
            break
        for e in forward.entries:
            e.born_iteration = it
        record = IterationRecord(it, forward)
        trace.iterations.append(record)

        if not variant.examines:
            for e in forward.entries:
                accepted.setdefault(e.key, DdxEntry(e.name, list(e.evidence), Status.ACCEPTED, it))
            break

        if variant.recalls:
            record.recalled = recall(forward.names(), _backend_for(backends, "backward"), log, t)
        outcome = examine(note.note_text, forward, record.recalled,
                          _backend_for(backends, "examination"), config.beta, log, t)
        record.examination = outcome
        if outcome.warning:
            trace.warnings.append(f"iteration {it}: {outcome.warning}")

        for e in outcome.revised.entries:
            if e.status is Status.ACCEPTED:
                pending.pop(e.key, None)
                if e.key in accepted:
                    _merge_evidence(accepted[e.key], e)
                else:
                    accepted[e.key] = DdxEntry(e.name, list(e.evidence), Status.ACCEPTED, it,
                                               list(e.sources or []))
            elif e.key not in accepted:
                pending[e.key] = _copy_entry(e)

        # a weak re-proposal of an already accepted diagnosis is not flagged again
        outcome.low_confidence = [n for n in outcome.low_confidence
                                  if normalize_name(n) not in accepted]
        if not outcome.low_confidence or it == config.effective_iterations:
            break
        feedback = build_feedback(outcome.low_confidence, outcome)
        record.feedback = feedback

    final = list(accepted.values())
    last_low = set()
    if trace.iterations and trace.iterations[-1].examination is not None:
        last_low = {normalize_name(n) for n in trace.iterations[-1].examination.low_confidence}
    # still flagged when the loop stopped -> low_confidence; dropped earlier -> filtered
    for key, e in pending.items():
        e.status = Status.LOW_CONFIDENCE if key in last_low else Status.FILTERED
        final.append(e)
    trace.final = DdxPrediction(final)
    trace.exchanges = log.items
    return trace


def _copy_entry(e: DdxEntry) -> DdxEntry:
    return DdxEntry(e.name, list(e.evidence), e.status, e.born_iteration,
                    None if e.sources is None else list(e.sources))


def _merge_evidence(target: DdxEntry, new: DdxEntry) -> None:
    have = {normalize_name(x) for x in target.evidence}
    for i, item in enumerate(new.evidence):
        if normalize_name(item) not in have:
            target.evidence.append(item)
            have.add(normalize_name(item))
            if target.sources is not None and new.sources is not None:
                target.sources.append(new.sources[i])
