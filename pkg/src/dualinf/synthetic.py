"""A rule-based stand-in for a chat model, driven by a gold corpus.

It reads the prompts rendered by :mod:`dualinf.protocol`, looks the note up in
the corpus and answers in the expected grammar with a deterministic mix of
correct, partial and wrong content. Useful for offline demos and for
recording scripted transcripts; it is not a model of clinical reasoning.
"""

from __future__ import annotations

import hashlib
import re

from .backend import ChatRequest, FunctionBackend
from .protocol import (
    FEEDBACK_MARKER,
    DdxEntry,
    DdxPrediction,
    parse_ddx_output,
    render_prediction,
    render_recall,
)
from .text import normalize_name

__all__ = ["SyntheticClinician", "synthetic_backend"]

DISTRACTORS = ("Viral syndrome", "Anxiety disorder", "Musculoskeletal strain", "Gastroenteritis")


def _section(text: str, title: str) -> str | None:
    m = re.search(rf"^### {re.escape(title)}\n(.*?)(?=^### |\Z)", text, re.S | re.M)
    return m.group(1).strip() if m else None


class SyntheticClinician:
    def __init__(self, corpus, seed: int = 0):
        self.by_text = {r.note_text.strip(): r for r in corpus}
        self.seed = seed

    def _h(self, *parts) -> int:
        raw = "\x1f".join(str(p) for p in (self.seed, *parts))
        return int.from_bytes(hashlib.sha256(raw.encode()).digest()[:8], "little")

    def _record(self, user: str):
        note = _section(user, "Patient note")
        return self.by_text.get(note.strip()) if note else None

    def __call__(self, request: ChatRequest, path_index: int | None) -> str:
        user = request.user_text
        if "Reply MATCH or NO_MATCH" in user:
            return self._judge(user)
        if "Reply CONSISTENT, FACTUAL_ERROR or NOT_RELEVANT" in user:
            return "CONSISTENT"
        if user.startswith("Reason from diagnoses back to findings"):
            return self._backward(user)
        rec = self._record(user)
        if rec is None:
            return "I cannot identify this patient."
        if user.startswith("Read the patient note"):
            return self._forward(rec, user)
        if user.startswith("Examine the candidate diagnoses"):
            return self._examine(rec, user)
        if "write a checklist" in user:
            return "- Reconcile diagnoses that appear in only one perspective."
        if user.startswith("Resolve each item"):
            return render_prediction(self._baseline(rec, "revise", 3))
        style = user.split("\n", 1)[0]
        return "Reasoning: summarized findings.\n\n" + render_prediction(
            self._baseline(rec, style, 2, path_index))

    # -- behaviours ---------------------------------------------------------

    def _forward(self, rec, user: str) -> str:
        n = len(rec.differentials)
        missed = self._h(rec.id, "missed") % (n + 1) if n > 1 else n
        if FEEDBACK_MARKER in user:
            entries = []
            if missed < n:
                g = rec.differentials[missed]
                entries.append(DdxEntry(g.diagnosis_name, list(g.evidence)))
            else:
                distractor = DISTRACTORS[self._h(rec.id, "d") % len(DISTRACTORS)]
                entries.append(DdxEntry(distractor, [rec.differentials[0].evidence[0]]))
            return render_prediction(DdxPrediction(entries))
        entries = []
        for i, g in enumerate(rec.differentials):
            if i == missed:
                continue
            k = 1 + self._h(rec.id, i, "k") % len(g.evidence)
            entries.append(DdxEntry(g.diagnosis_name, list(g.evidence[:k])))
        if self._h(rec.id, "distract") % 2:
            distractor = DISTRACTORS[self._h(rec.id, "d") % len(DISTRACTORS)]
            entries.append(DdxEntry(distractor, [rec.differentials[0].evidence[0]]))
        return render_prediction(DdxPrediction(entries))

    def _backward(self, user: str) -> str:
        names = re.findall(r"^- (.+)$", _section(user, "Diagnoses") or "", re.M)
        known = {}
        for rec in self.by_text.values():
            for g in rec.differentials:
                known.setdefault(normalize_name(g.diagnosis_name), list(g.evidence))
        return render_recall({n: known.get(normalize_name(n), ["Nonspecific malaise"]) for n in names})

    def _examine(self, rec, user: str) -> str:
        try:
            forward = parse_ddx_output(_section(user, "Candidate diagnoses") or "")
        except ValueError:
            return "No candidates."
        recalled = "Recalled knowledge" in user
        gold = {normalize_name(g.diagnosis_name): g for g in rec.differentials}
        out = []
        for e in forward.entries:
            g = gold.get(e.key)
            evidence = list(e.evidence)
            if g is not None:
                # keep only note-supported items, then supplement
                evidence = [x for x in evidence if x in g.evidence]
                extra = len(g.evidence) if recalled else 1
                for x in g.evidence:
                    if extra <= 0:
                        break
                    if x not in evidence:
                        evidence.append(x)
                        extra -= 1
            out.append(DdxEntry(e.name, evidence))
        return render_prediction(DdxPrediction(out))

    def _baseline(self, rec, style: str, max_items: int, path_index: int | None = None):
        salt = (style, path_index)
        entries = []
        for i, g in enumerate(rec.differentials):
            if self._h(rec.id, i, salt, "keep") % 3 == 0:
                continue
            k = 1 + self._h(rec.id, i, salt, "k") % min(max_items + 1, len(g.evidence))
            entries.append(DdxEntry(g.diagnosis_name, list(g.evidence[:k])))
        if not entries or self._h(rec.id, salt, "distract") % 2:
            distractor = DISTRACTORS[self._h(rec.id, salt, "d") % len(DISTRACTORS)]
            entries.append(DdxEntry(distractor, [rec.differentials[0].evidence[0]]))
        return DdxPrediction(entries)

    def _judge(self, user: str) -> str:
        gold = _section(user, "Reference diagnosis")
        if gold is not None:
            pred = _section(user, "Predicted diagnosis") or ""
            return "MATCH" if normalize_name(gold) == normalize_name(pred) else "NO_MATCH"
        item = normalize_name(_section(user, "Reference evidence") or "")
        cands = re.findall(r'^- "(.*)"$', _section(user, "Candidate evidence") or "", re.M)
        return "MATCH" if any(normalize_name(c) == item for c in cands) else "NO_MATCH"


def synthetic_backend(corpus, seed: int = 0, backend_id: str = "synthetic", **kw) -> FunctionBackend:
    return FunctionBackend(SyntheticClinician(corpus, seed), backend_id, **kw)
