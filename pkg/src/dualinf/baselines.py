"""Comparison methods: CoT, Diagnosis-CoT, self-consistency CoT and Self-Contrast."""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .backend import ChatBackend, DEFAULT_TEMPERATURE
from .engine import ExchangeLog, ask
from .protocol import (
    DdxEntry,
    DdxPrediction,
    PromptKind,
    UnparseableOutput,
    parse_ddx_output,
    render_prompt,
)
from .text import normalize_name

__all__ = ["Method", "BaselineConfig", "BaselineTrace", "consistency_vote", "run_baseline"]

SC_COT_TEMPERATURE = 0.7


class Method(str, enum.Enum):
    COT = "cot"
    DIAGNOSIS_COT = "diagnosis_cot"
    SC_COT = "sc_cot"
    SELF_CONTRAST = "self_contrast"


@dataclass(frozen=True)
class BaselineConfig:
    method: Method = Method.COT
    paths: int = 5
    vote_threshold: int | None = None
    temperature: float | None = None
    max_output: int = 2048

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.vote_threshold is not None and not 1 <= self.vote_threshold <= self.paths:
            raise ValueError("vote_threshold must lie in [1, paths]")

    @property
    def threshold(self) -> int:
        if self.vote_threshold is not None:
            return self.vote_threshold
        return math.ceil((self.paths + 1) / 2)

    def temperature_for(self, backend: ChatBackend) -> float:
        if self.temperature is not None:
            return self.temperature
        # greedy decoding would make every path identical
        if self.method is Method.SC_COT and backend.live:
            return SC_COT_TEMPERATURE
        return DEFAULT_TEMPERATURE

    def to_dict(self) -> dict:
        return {"method": self.method.value, "paths": self.paths,
                "vote_threshold": self.threshold, "temperature": self.temperature,
                "max_output": self.max_output}


@dataclass
class BaselineTrace:
    note_id: str
    config: BaselineConfig
    prediction: DdxPrediction = field(default_factory=DdxPrediction)
    raw_paths: list[str | None] = field(default_factory=list)
    intermediate: dict[str, str] = field(default_factory=dict)
    status: str = "ok"
    error: str | None = None
    exchanges: list[dict] = field(default_factory=list)
    temperature: float = DEFAULT_TEMPERATURE

    # same surface as PipelineTrace for reporting
    @property
    def final(self) -> DdxPrediction:
        return self.prediction

    @property
    def iterations_used(self) -> int:
        return 1

    def to_dict(self) -> dict:
        return {
            "note_id": self.note_id,
            "method": self.config.method.value.replace("_", "-"),
            "config": self.config.to_dict(),
            "temperature": self.temperature,
            "iterations_used": 1,
            "final": self.prediction.to_dict(),
            "raw_paths": list(self.raw_paths),
            "intermediate": dict(self.intermediate),
            "status": self.status,
            "error": self.error,
            "exchanges": list(self.exchanges),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=1)


def consistency_vote(paths: list[DdxPrediction], threshold: int) -> DdxPrediction:
    """Majority-style vote over sampled predictions.

    A diagnosis survives when its normalized name occurs in at least
    ``threshold`` paths. Its evidence keeps the items (normalized equality)
    found in at least ``ceil(threshold / 2)`` of the paths that contain it.
    Diagnoses are ordered by vote count, then first appearance; evidence by
    first appearance.
    """
    if not paths:
        raise ValueError("consistency_vote needs at least one path")
    votes: Counter[str] = Counter()
    first_seen: dict[str, tuple[int, int]] = {}
    surface: dict[str, str] = {}
    ev_votes: dict[str, Counter[str]] = {}
    ev_surface: dict[str, dict[str, str]] = {}
    for p, path in enumerate(paths):
        seen_here = set()
        for pos, entry in enumerate(path.entries):
            key = entry.key
            if key in seen_here:
                continue
            seen_here.add(key)
            votes[key] += 1
            if key not in first_seen:
                first_seen[key] = (p, pos)
                surface[key] = entry.name
                ev_votes[key] = Counter()
                ev_surface[key] = {}
            for item in dict.fromkeys(normalize_name(e) for e in entry.evidence):
                ev_votes[key][item] += 1
            for e in entry.evidence:
                ev_surface[key].setdefault(normalize_name(e), e)

    need = math.ceil(threshold / 2)
    kept = [k for k in votes if votes[k] >= threshold]
    kept.sort(key=lambda k: (-votes[k], first_seen[k]))
    entries = []
    for key in kept:
        evidence = [ev_surface[key][e] for e in ev_surface[key] if ev_votes[key][e] >= need]
        entries.append(DdxEntry(surface[key], evidence))
    return DdxPrediction(entries)


def run_baseline(note, config: BaselineConfig, backend: ChatBackend,
                 run_index: int = 0) -> BaselineTrace:
    log = ExchangeLog(run_index)
    temperature = config.temperature_for(backend)
    trace = BaselineTrace(note.id, config, temperature=temperature)
    kw = dict(temperature=temperature, max_output=config.max_output, note=note.note_text)
    method = config.method

    try:
        if method in (Method.COT, Method.DIAGNOSIS_COT):
            kind = PromptKind.COT if method is Method.COT else PromptKind.DIAGNOSIS_COT
            trace.prediction, raw = ask(backend, kind, parse_ddx_output, log, **kw)
            trace.raw_paths = [raw]

        elif method is Method.SC_COT:
            parsed = []
            for k in range(config.paths):
                try:
                    pred, raw = ask(backend, PromptKind.COT, parse_ddx_output, log,
                                    path_index=k, retry=False, **kw)
                except UnparseableOutput as exc:
                    trace.raw_paths.append(exc.text)
                    continue
                trace.raw_paths.append(raw)
                parsed.append(pred)
            if not parsed:
                raise UnparseableOutput("", "parseable reasoning paths")
            trace.prediction = consistency_vote(parsed, config.threshold)

        elif method is Method.SELF_CONTRAST:
            trace.prediction = _self_contrast(note, backend, log, trace, kw)

    except UnparseableOutput as exc:
        trace.status = "failed"
        trace.error = str(exc)
    trace.exchanges = log.items
    return trace


def _self_contrast(note, backend, log, trace, kw) -> DdxPrediction:
    perspectives = {}
    for kind in (PromptKind.SELF_CONTRAST_SYMPTOM, PromptKind.SELF_CONTRAST_RED_FLAG):
        try:
            pred, raw = ask(backend, kind, parse_ddx_output, log, **kw)
        except UnparseableOutput as exc:
            trace.raw_paths.append(exc.text)
            continue
        trace.raw_paths.append(raw)
        perspectives[kind] = pred
    if not perspectives:
        raise UnparseableOutput("", "parseable perspectives")
    if len(perspectives) == 1:
        return next(iter(perspectives.values()))
    first = perspectives[PromptKind.SELF_CONTRAST_SYMPTOM]
    second = perspectives[PromptKind.SELF_CONTRAST_RED_FLAG]

    prompt = render_prompt(PromptKind.SELF_CONTRAST_CHECKLIST, note=kw["note"],
                           first=first, second=second)
    req = backend.request(prompt.system_text, prompt.user_text, kw["temperature"], kw["max_output"])
    ex = backend.complete(req, run_index=log.run_index)
    log.add(PromptKind.SELF_CONTRAST_CHECKLIST.value, ex)
    checklist = (ex.response_text or "").strip() or "- (no discrepancies listed)"
    trace.intermediate["checklist"] = checklist

    revised, _ = ask(backend, PromptKind.SELF_CONTRAST_REVISE, parse_ddx_output, log,
                     first=first, second=second, checklist=checklist, **kw)
    return revised
