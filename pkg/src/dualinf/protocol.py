"""Prompt rendering and the structured DDx output grammar.

Canonical grammar, one block per diagnosis::

    The patient may suffer from *<name>* because of the following symptoms or evidence:
    "<evidence 1>", "<evidence 2>"

Inside names ``*`` and ``\\`` are backslash-escaped; inside evidence ``"`` and
``\\`` are. The parser additionally accepts bullets, numbering, ``**bold**``,
``_underscore_``, ``<i>html</i>`` or quoted names, and curly quotes.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

from .text import normalize_name

__all__ = [
    "Status",
    "DdxEntry",
    "DdxPrediction",
    "UnparseableOutput",
    "PromptKind",
    "Prompt",
    "MissingContext",
    "HEADER_PREFIX",
    "HEADER_SUFFIX",
    "FORMAT_REMINDER",
    "FEEDBACK_MARKER",
    "render_prediction",
    "parse_ddx_output",
    "render_recall",
    "parse_recall_output",
    "render_prompt",
]

HEADER_PREFIX = "The patient may suffer from"
HEADER_SUFFIX = "because of the following symptoms or evidence:"
RECALL_SUFFIX = "is typically associated with the following symptoms or findings:"
FEEDBACK_MARKER = "Low-confidence diagnoses to reconsider:"


class Status(str, enum.Enum):
    ACCEPTED = "accepted"
    LOW_CONFIDENCE = "low_confidence"
    FILTERED = "filtered"


@dataclass
class DdxEntry:
    name: str
    evidence: list[str] = field(default_factory=list)
    status: Status = Status.ACCEPTED
    born_iteration: int = 1
    # parallel to ``evidence`` when known: "forward", "recalled" or "note"
    sources: list[str] | None = None

    @property
    def key(self) -> str:
        return normalize_name(self.name)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "evidence": list(self.evidence),
            "status": self.status.value,
            "born_iteration": self.born_iteration,
        }
        if self.sources is not None:
            out["sources"] = list(self.sources)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "DdxEntry":
        return cls(
            obj["name"],
            list(obj["evidence"]),
            Status(obj.get("status", "accepted")),
            obj.get("born_iteration", 1),
            obj.get("sources"),
        )


@dataclass
class DdxPrediction:
    entries: list[DdxEntry] = field(default_factory=list)

    def accepted(self) -> list[DdxEntry]:
        return [e for e in self.entries if e.status is Status.ACCEPTED]

    def pairs(self) -> list[tuple[str, tuple[str, ...]]]:
        return [(e.name, tuple(e.evidence)) for e in self.entries]

    def find(self, name: str) -> DdxEntry | None:
        key = normalize_name(name)
        for e in self.entries:
            if e.key == key:
                return e
        return None

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, obj: dict) -> "DdxPrediction":
        return cls([DdxEntry.from_dict(e) for e in obj["entries"]])

    def copy(self) -> "DdxPrediction":
        return DdxPrediction(
            [replace(e, evidence=list(e.evidence),
                     sources=None if e.sources is None else list(e.sources))
             for e in self.entries]
        )


class UnparseableOutput(ValueError):
    def __init__(self, text: str, what: str = "diagnosis blocks"):
        super().__init__(f"unparseable output: no {what} found")
        self.text = text


# --- grammar ----------------------------------------------------------------

def _escape_name(name: str) -> str:
    return name.replace("\\", "\\\\").replace("*", "\\*")


def _escape_evidence(item: str) -> str:
    return item.replace("\\", "\\\\").replace('"', '\\"')


_UNESCAPE = re.compile(r"\\(.)", re.DOTALL)


def _unescape(text: str) -> str:
    return _UNESCAPE.sub(r"\1", text)


def _render_blocks(pairs, suffix: str, prefix: str) -> str:
    blocks = []
    for name, evidence in pairs:
        head = f"{prefix}*{_escape_name(name)}* {suffix}".lstrip()
        items = ", ".join(f'"{_escape_evidence(e)}"' for e in evidence)
        blocks.append(f"{head}\n{items}" if items else head)
    return "\n\n".join(blocks)


def render_prediction(pred: DdxPrediction) -> str:
    return _render_blocks(
        ((e.name, e.evidence) for e in pred.entries), HEADER_SUFFIX, HEADER_PREFIX + " "
    )


_NAME_ALTERNATIVES = (
    r"\*\*(?P<n1>(?:\\.|[^*\\\n])+?)\*\*"
    r"|\*(?P<n2>(?:\\.|[^*\\\n])+)\*"
    r"|<(?:i|em|b)>(?P<n3>[^<\n]+)</(?:i|em|b)>"
    r"|_(?P<n4>[^_\n]+)_"
    r'|"(?P<n5>(?:\\.|[^"\\\n])+)"'
    r"|[“‘](?P<n6>[^”’\n]+)[”’]"
    r"|(?P<n7>[^\n]+?)"
)
_QUOTE = r'"(?P<q1>(?:\\.|[^"\\])*)"|“(?P<q2>[^”]*)”'

_DDX_SCANNER = re.compile(
    r"(?P<header>the\s+patient\s+may\s+suffer\s+from\s*:?\s+(?:" + _NAME_ALTERNATIVES + r")"
    r"[ \t]*,?[ \t]*because\b[^\n:]*:?)|" + _QUOTE,
    re.IGNORECASE,
)
_RECALL_SCANNER = re.compile(
    r"(?P<header>(?:^|(?<=\n))[ \t]*(?:[-*•]|\d+[.)])?[ \t]*(?:" + _NAME_ALTERNATIVES + r")"
    r"[ \t]+is\s+typically\s+associated\b[^\n:]*:?)|" + _QUOTE,
    re.IGNORECASE,
)


# stray emphasis stars around a name; escaped stars are part of the name
_EDGE_STARS = re.compile(r"^\*+|(?<!\\)\*+$")


def _scan(text: str, scanner: re.Pattern) -> list[tuple[str, list[str]]]:
    blocks: list[tuple[str, list[str]]] = []
    for m in scanner.finditer(text):
        if m.group("header") is not None:
            raw = next(m.group(f"n{i}") for i in range(1, 8) if m.group(f"n{i}") is not None)
            name = _unescape(_EDGE_STARS.sub("", raw.strip())).strip()
            blocks.append((name, []))
        elif blocks:
            q = m.group("q1")
            item = _unescape(q) if q is not None else m.group("q2")
            if item.strip():
                blocks[-1][1].append(item)
    merged: dict[str, tuple[str, list[str]]] = {}
    for name, evidence in blocks:
        if not normalize_name(name):
            continue
        slot = merged.setdefault(normalize_name(name), (name, []))
        for item in evidence:
            if normalize_name(item) not in {normalize_name(x) for x in slot[1]}:
                slot[1].append(item)
    return list(merged.values())


def parse_ddx_output(text: str) -> DdxPrediction:
    """Extract diagnosis blocks; raises :class:`UnparseableOutput` if there are none."""
    blocks = _scan(text or "", _DDX_SCANNER)
    if not blocks:
        raise UnparseableOutput(text)
    return DdxPrediction([DdxEntry(name, evidence) for name, evidence in blocks])


def render_recall(recalled: dict[str, Sequence[str]]) -> str:
    return _render_blocks(recalled.items(), RECALL_SUFFIX, "")


def parse_recall_output(text: str) -> dict[str, list[str]]:
    blocks = _scan(text or "", _RECALL_SCANNER)
    if not blocks:
        raise UnparseableOutput(text, "recall blocks")
    return {name: evidence for name, evidence in blocks}


# --- prompts ----------------------------------------------------------------

class PromptKind(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    EXAMINATION = "examination"
    COT = "cot"
    DIAGNOSIS_COT = "diagnosis_cot"
    SELF_CONTRAST_SYMPTOM = "self_contrast_symptom"
    SELF_CONTRAST_RED_FLAG = "self_contrast_red_flag"
    SELF_CONTRAST_CHECKLIST = "self_contrast_checklist"
    SELF_CONTRAST_REVISE = "self_contrast_revise"
    JUDGE_INTERPRETATION = "judge_interpretation"
    JUDGE_DIAGNOSIS = "judge_diagnosis"
    ERROR_CLASSIFIER = "error_classifier"


class Prompt(NamedTuple):
    system_text: str
    user_text: str


class MissingContext(ValueError):
    pass


_SYSTEM_CLINICIAN = (
    "You are an experienced physician producing a differential diagnosis with "
    "explicit supporting evidence for every candidate diagnosis."
)
_SYSTEM_JUDGE = (
    "You are a careful clinical evaluator. Answer with exactly one token and nothing else."
)

_GRAMMAR = (
    "Answer using exactly this format for every diagnosis, and nothing else:\n"
    f"{HEADER_PREFIX} *<diagnosis>* {HEADER_SUFFIX}\n"
    '"<evidence 1>", "<evidence 2>", "<evidence 3>"\n'
    "Each evidence item is one symptom, examination finding or test result, "
    "enclosed in double quotes."
)
_RECALL_GRAMMAR = (
    "Answer using exactly this format for every diagnosis, and nothing else:\n"
    f"*<diagnosis>* {RECALL_SUFFIX}\n"
    '"<finding 1>", "<finding 2>", "<finding 3>"'
)

FORMAT_REMINDER = (
    "Your previous answer could not be read. Reply again strictly in the required "
    "format: one block per diagnosis starting with "
    f"\"{HEADER_PREFIX} *<diagnosis>* {HEADER_SUFFIX}\" followed by the evidence "
    "items in double quotes."
)


ANSWER_SECTION = "Answer format"


def _section(title: str, body: str) -> str:
    return f"### {title}\n{body.strip()}\n"


def _need(ctx: dict, *names: str, kind: PromptKind) -> None:
    for name in names:
        if ctx.get(name) in (None, "", [], {}):
            raise MissingContext(f"{kind.value} prompt requires {name!r}")


def _names_of(value) -> list[str]:
    if isinstance(value, DdxPrediction):
        return value.names()
    return [str(v) for v in value]


def _as_text(value) -> str:
    return render_prediction(value) if isinstance(value, DdxPrediction) else str(value)


def render_prompt(kind: PromptKind | str, **ctx) -> Prompt:
    """Build the (system, user) texts for one call site.

    Context keys by kind:

    - forward: ``note``; optional ``feedback`` (a :class:`~dualinf.engine.Feedback`
      or list of names) and ``accepted`` (names already accepted)
    - backward: ``diagnoses``
    - examination: ``note``, ``forward`` and ``recalled`` (mapping name -> findings);
      ``recalled`` may be empty only when ``allow_no_recall`` is set
    - cot, diagnosis_cot, self_contrast_symptom, self_contrast_red_flag: ``note``
    - self_contrast_checklist: ``note``, ``first``, ``second``
    - self_contrast_revise: ``note``, ``first``, ``second``, ``checklist``
    - judge_diagnosis: ``gold``, ``predicted``
    - judge_interpretation: ``item``, ``candidates``
    - error_classifier: ``diagnosis``, ``item``, ``note`` (optional)
    """
    kind = PromptKind(kind)
    user: list[str] = []

    if kind is PromptKind.FORWARD:
        _need(ctx, "note", kind=kind)
        user.append("Read the patient note and list every plausible differential diagnosis "
                    "together with the evidence from the note that supports each one.")
        user.append(_section("Patient note", ctx["note"]))
        feedback = ctx.get("feedback")
        if feedback:
            accepted = ctx.get("accepted") or []
            if accepted:
                user.append(_section("Already accepted diagnoses",
                                     "\n".join(f"- {n}" for n in accepted)))
            user.append(_section("Reflection", _feedback_text(feedback)))
        user.append(_section(ANSWER_SECTION, _GRAMMAR))
        system = _SYSTEM_CLINICIAN

    elif kind is PromptKind.BACKWARD:
        _need(ctx, "diagnoses", kind=kind)
        names = _names_of(ctx["diagnoses"])
        user.append("Reason from diagnoses back to findings. For each diagnosis below, recall "
                    "all of its representative symptoms, including medical examination "
                    "and laboratory test results.")
        user.append(_section("Diagnoses", "\n".join(f"- {n}" for n in names)))
        user.append(_section(ANSWER_SECTION, _RECALL_GRAMMAR))
        system = "You are a medical knowledge expert recalling textbook presentations of diseases."

    elif kind is PromptKind.EXAMINATION:
        _need(ctx, "note", "forward", kind=kind)
        recalled = ctx.get("recalled")
        if not recalled and not ctx.get("allow_no_recall"):
            raise MissingContext("examination prompt requires 'recalled'")
        user.append("Examine the candidate diagnoses below. For each diagnosis: (1) discard "
                    "evidence that is wrong or not present in the patient note"
                    + (", comparing it against the recalled knowledge" if recalled else "")
                    + "; (2) add missing evidence found in the patient note"
                    + (" that matches the recalled knowledge" if recalled else "")
                    + "; (3) keep every diagnosis, even if little evidence remains.")
        user.append(_section("Patient note", ctx["note"]))
        user.append(_section("Candidate diagnoses", _as_text(ctx["forward"])))
        if recalled:
            user.append(_section("Recalled knowledge", render_recall(recalled)))
        user.append(_section(ANSWER_SECTION, _GRAMMAR))
        system = _SYSTEM_CLINICIAN

    elif kind in (PromptKind.COT, PromptKind.DIAGNOSIS_COT,
                  PromptKind.SELF_CONTRAST_SYMPTOM, PromptKind.SELF_CONTRAST_RED_FLAG):
        _need(ctx, "note", kind=kind)
        user.append({
            PromptKind.COT: "Let's think step by step about which diseases could explain this "
                            "patient's presentation, then give the differential diagnosis.",
            PromptKind.DIAGNOSIS_COT: "Reason like a clinician: summarize the key findings, "
                                      "build a problem representation, consider the most likely "
                                      "and the must-not-miss conditions, then give the "
                                      "differential diagnosis.",
            PromptKind.SELF_CONTRAST_SYMPTOM: "Work from the symptoms: group the patient's "
                                              "findings and name the diseases that best explain "
                                              "each group.",
            PromptKind.SELF_CONTRAST_RED_FLAG: "Work from red flags: identify dangerous findings "
                                               "and name the diseases that must be ruled in or "
                                               "ruled out.",
        }[kind])
        user.append(_section("Patient note", ctx["note"]))
        user.append(_section(ANSWER_SECTION, "Write your reasoning first, then the final answer.\n" + _GRAMMAR))
        system = _SYSTEM_CLINICIAN

    elif kind is PromptKind.SELF_CONTRAST_CHECKLIST:
        _need(ctx, "note", "first", "second", kind=kind)
        user.append("Two differential diagnoses were produced for the same patient from different "
                    "perspectives. Compare them and write a checklist of every discrepancy in "
                    "diagnoses and in supporting evidence that must be resolved.")
        user.append(_section("Patient note", ctx["note"]))
        user.append(_section("Perspective A", _as_text(ctx["first"])))
        user.append(_section("Perspective B", _as_text(ctx["second"])))
        user.append(_section(ANSWER_SECTION, "Answer as a bulleted checklist."))
        system = _SYSTEM_CLINICIAN

    elif kind is PromptKind.SELF_CONTRAST_REVISE:
        _need(ctx, "note", "first", "second", "checklist", kind=kind)
        user.append("Resolve each item of the checklist against the patient note and produce one "
                    "revised differential diagnosis.")
        user.append(_section("Patient note", ctx["note"]))
        user.append(_section("Perspective A", _as_text(ctx["first"])))
        user.append(_section("Perspective B", _as_text(ctx["second"])))
        user.append(_section("Checklist", ctx["checklist"]))
        user.append(_section(ANSWER_SECTION, _GRAMMAR))
        system = _SYSTEM_CLINICIAN

    elif kind is PromptKind.JUDGE_DIAGNOSIS:
        _need(ctx, "gold", "predicted", kind=kind)
        user.append("Does the predicted diagnosis refer to the reference diagnosis, a synonym "
                    "of it, or a subtype of it?")
        user.append(_section("Reference diagnosis", ctx["gold"]))
        user.append(_section("Predicted diagnosis", ctx["predicted"]))
        user.append(_section(ANSWER_SECTION, "Reply MATCH or NO_MATCH."))
        system = _SYSTEM_JUDGE

    elif kind is PromptKind.JUDGE_INTERPRETATION:
        _need(ctx, "item", "candidates", kind=kind)
        user.append("Is the reference evidence item expressed, with the same clinical meaning, "
                    "by any of the candidate evidence items?")
        user.append(_section("Reference evidence", ctx["item"]))
        user.append(_section("Candidate evidence",
                             "\n".join(f'- "{c}"' for c in ctx["candidates"])))
        user.append(_section(ANSWER_SECTION, "Reply MATCH or NO_MATCH."))
        system = _SYSTEM_JUDGE

    elif kind is PromptKind.ERROR_CLASSIFIER:
        _need(ctx, "diagnosis", "item", kind=kind)
        user.append("Assess one piece of evidence offered in support of a diagnosis. Reply "
                    "FACTUAL_ERROR if the statement is medically incorrect or contradicts the "
                    "note, NOT_RELEVANT if it is correct but not pertinent to the diagnosis, "
                    "otherwise CONSISTENT.")
        if ctx.get("note"):
            user.append(_section("Patient note", ctx["note"]))
        user.append(_section("Diagnosis", ctx["diagnosis"]))
        user.append(_section("Evidence", ctx["item"]))
        user.append(_section(ANSWER_SECTION, "Reply CONSISTENT, FACTUAL_ERROR or NOT_RELEVANT."))
        system = _SYSTEM_JUDGE

    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(kind)

    return Prompt(system, "\n".join(user).strip())


def _feedback_text(feedback) -> str:
    if hasattr(feedback, "render"):
        return feedback.render()
    names = list(dict.fromkeys(_names_of(feedback)))
    lines = [FEEDBACK_MARKER] + [f"- {n}" for n in names]
    lines.append("These diagnoses lacked sufficient supporting evidence. Think twice: "
                 "reconsider each of them and either support it with more evidence from the "
                 "note or replace it with a better-supported diagnosis.")
    return "\n".join(lines)
