"""
One note through the bidirectional inference loop
=================================================

Forward inference proposes diagnoses with evidence, backward inference
recalls what each diagnosis usually looks like, and the examination step
prunes and supplements evidence. Diagnoses left with fewer than beta items
are fed back for another round, up to lambda rounds.

The chat model here is the rule-based synthetic clinician, so the run is
offline and deterministic.
"""

from pathlib import Path

from dualinf.corpus import load_corpus
from dualinf.engine import PipelineConfig, run_pipeline
from dualinf.synthetic import synthetic_backend

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"
corpus = load_corpus(DATA / "mini_corpus.jsonl")
backend = synthetic_backend(corpus)

# pick the note that needs the most rounds
traces = {r.id: run_pipeline(r, PipelineConfig(), synthetic_backend(corpus)) for r in corpus}
note = max(corpus, key=lambda r: traces[r.id].iterations_used)
print(note.id, "|", note.specialty)
print("gold:", [d.diagnosis_name for d in note.differentials])

# beta=3 items per accepted diagnosis, at most lambda=5 rounds
trace = run_pipeline(note, PipelineConfig(beta=3, max_iterations=5), backend)

for it in trace.iterations:
    print(f"\niteration {it.iteration}")
    print("  forward :", [(e.name, len(e.evidence)) for e in it.forward.entries])
    print("  recalled:", {k: len(v) for k, v in (it.recalled or {}).items()})
    print("  revised :", [(e.name, len(e.evidence)) for e in it.examination.revised.entries])
    print("  low confidence:", it.examination.low_confidence)

print("\nfinal differential")
for e in trace.final.entries:
    print(f"  {e.status.value:<15} {e.name} ({len(e.evidence)} items, born in iteration {e.born_iteration})")
print("backend calls:", backend.calls)

# The ablations reuse the same machinery with steps switched off. Without
# recall the synthetic examiner adds one item at most, so fi_em_star keeps
# few diagnoses.
for variant in ("fi", "fi_em_star", "dual_inf_star"):
    t = run_pipeline(note, PipelineConfig(variant=variant), synthetic_backend(corpus))
    print(f"{variant:<14} accepted: {[e.name for e in t.final.accepted()]}")
