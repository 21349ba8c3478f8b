"""Fixture builders shared by the test modules."""

from __future__ import annotations

import random
import re
from pathlib import Path

from dualinf.corpus import SPECIALTIES, DifferentialEntry, NoteRecord, save_corpus
from dualinf.protocol import DdxEntry, DdxPrediction

DATA = Path(__file__).parent / "data"
MINI_CORPUS = DATA / "mini_corpus.jsonl"
RARE_LIST = DATA / "rare_list.txt"
TABLE4_BLOCK = DATA / "table4_dual_inf.txt"

FINDINGS = [
    "Fever", "Productive cough", "Dyspnea", "Pleuritic chest pain", "Tachycardia",
    "Weight loss", "Night sweats", "Hemoptysis", "Abdominal pain", "Jaundice",
    "Pruritus", "Joint swelling", "Morning stiffness", "Headache", "Photophobia",
    "Neck stiffness", "Rash on the trunk", "Palpitations", "Syncope", "Edema of the legs",
    "Polyuria", "Polydipsia", "Fatigue", "Diarrhea", "Hematuria",
]
DISEASES = [
    "Pneumonia", "Tuberculosis", "Pulmonary embolism", "Hepatitis B", "Gallstones",
    "Rheumatoid arthritis", "Meningitis", "Migraine", "Atrial fibrillation",
    "Heart failure", "Type 1 diabetes mellitus", "Crohn disease", "Nephrolithiasis",
    "Sarcoidosis", "Lupus nephritis", "Hyperthyroidism",
]


def make_record(note_id: str, differentials, specialty: str = "Respiratory disease",
                note_text: str | None = None) -> NoteRecord:
    diffs = tuple(DifferentialEntry(n, tuple(ev)) for n, ev in differentials)
    if note_text is None:
        findings = sorted({e for _, ev in differentials for e in ev})
        note_text = (f"Patient {note_id} presents with " + ", ".join(findings).lower()
                     + ". History and examination were otherwise documented in detail "
                       "by the admitting clinician.")
        if len(note_text) < 130:
            note_text += " Vital signs were recorded on arrival and repeated at intervals."
    return NoteRecord(note_id, specialty, note_text, diffs)


def generated_corpus(n: int, seed: int = 7) -> list[NoteRecord]:
    """Deterministic synthetic corpus: 3-5 diagnoses per note, 2-5 findings each."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        names = rng.sample(DISEASES, rng.randint(3, 5))
        diffs = [(name, rng.sample(FINDINGS, rng.randint(2, 5))) for name in names]
        out.append(make_record(f"g{i:03d}", diffs, SPECIALTIES[i % len(SPECIALTIES)]))
    return out


def write_corpus(records, path: Path) -> Path:
    save_corpus(records, path)
    return path


def pred(*items) -> DdxPrediction:
    """``pred(("Flu", ["a", "b"]), ...)``."""
    return DdxPrediction([DdxEntry(name, list(ev)) for name, ev in items])


def brute_force_vote(paths, threshold):
    """Reference vote: count each normalized name once per path, keep names
    with at least ``threshold`` votes, then evidence seen in at least
    ``ceil(threshold / 2)`` of those paths. Returns ``[(name, [evidence])]``."""
    import math

    from dualinf.text import normalize_name

    names = {}
    for p, path in enumerate(paths):
        for pos, e in enumerate(path.entries):
            k = normalize_name(e.name)
            info = names.setdefault(k, {"name": e.name, "first": (p, pos), "paths": []})
            if p not in [q for q, _ in info["paths"]]:
                info["paths"].append((p, e))
    out = []
    for k, info in names.items():
        votes = len(info["paths"])
        if votes < threshold:
            continue
        order, counts = [], {}
        for _, e in info["paths"]:
            for item in e.evidence:
                n = normalize_name(item)
                if n not in counts:
                    order.append((n, item))
                    counts[n] = set()
        for p, e in info["paths"]:
            for item in e.evidence:
                counts[normalize_name(item)].add(p)
        ev = [item for n, item in order if len(counts[n]) >= math.ceil(threshold / 2)]
        out.append((-votes, info["first"], info["name"], ev))
    out.sort(key=lambda t: (t[0], t[1]))
    return [(name, ev) for _, _, name, ev in out]


def _note_section(user: str, title: str) -> str:
    m = re.search(rf"^### {re.escape(title)}\n(.*?)(?=^### |\Z)", user, re.S | re.M)
    return m.group(1).strip() if m else ""


def iteration_backend(corpus, plan: dict[str, int]):
    """Dual-Inf backend whose note ``id`` needs ``plan[id]`` iterations (1, 2 or 5).

    Examination echoes the forward candidates, so a diagnosis is accepted
    exactly when the forward step gave it three items.
    """
    from dualinf.backend import FunctionBackend
    from dualinf.protocol import FEEDBACK_MARKER, render_prediction, render_recall

    by_text = {r.note_text.strip(): r for r in corpus}
    strong = pred(("Strong", ["s1", "s2", "s3"]))
    weak = pred(("Weak", ["w1", "w2"]))

    def fn(request, path_index):
        user = request.user_text
        if user.startswith("Reason from diagnoses back to findings"):
            return render_recall({})
        if user.startswith("Examine the candidate diagnoses"):
            return _note_section(user, "Candidate diagnoses")
        rec = by_text[_note_section(user, "Patient note")]
        need = plan[rec.id]
        if FEEDBACK_MARKER in user:
            return render_prediction(strong if need == 2 else weak)
        return render_prediction(strong if need == 1 else weak)

    return FunctionBackend(fn, "iterations")


def gold_backend(corpus):
    """Baseline backend that answers every note with its gold differential."""
    from dualinf.backend import FunctionBackend
    from dualinf.protocol import render_prediction

    by_text = {r.note_text.strip(): r for r in corpus}

    def fn(request, path_index):
        rec = by_text[_note_section(request.user_text, "Patient note")]
        return "Reasoning: gold.\n\n" + render_prediction(
            pred(*[(d.diagnosis_name, d.evidence) for d in rec.differentials]))

    return FunctionBackend(fn, "gold")


def record_transcript(corpus_path: Path, out: Path, method: str = "dual-inf", runs: int = 1,
                      seed: int = 0) -> Path:
    """Drive the synthetic clinician once and save every answer as a transcript."""
    from dualinf.backend import RecordingBackend
    from dualinf.corpus import load_corpus
    from dualinf.harness import RunConfig, cmd_run
    from dualinf.synthetic import synthetic_backend

    rec = RecordingBackend(synthetic_backend(load_corpus(corpus_path), seed))
    cmd_run(RunConfig(str(corpus_path), method=method, runs=runs, out=str(out / "recording")),
            backends={"default": rec})
    path = out / "transcript.json"
    rec.transcript.save(path)
    return path
