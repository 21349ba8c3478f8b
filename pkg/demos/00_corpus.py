"""
Loading a note corpus and summarizing it
========================================

A corpus is a JSON-lines file: one clinical note per line with its
specialty and the gold differential (diagnosis names with supporting
evidence). Loading validates every record, and a rare-disease list selects
the notes whose gold differential names a listed disease.
"""

from pathlib import Path

from dualinf.corpus import compute_stats, filter_rare, load_corpus, load_rare_list

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"
corpus = load_corpus(DATA / "mini_corpus.jsonl")

stats = compute_stats(corpus)
print("notes:", stats.note_count, "| specialties:", stats.specialty_count)
print(f"diagnoses per note: {stats.diagnoses_per_note_mean:.2f} +/- {stats.diagnoses_per_note_std:.2f}")
print(f"evidence per diagnosis: {stats.evidence_per_diagnosis_mean:.2f}")
print(f"note length: {stats.note_length_mean:.0f} characters on average")
for specialty, count in stats.per_specialty_counts.items():
    print(f"  {specialty:<28} {count}")

# Names match after normalization, or as whole words inside a longer name
rare = filter_rare(corpus, load_rare_list(DATA / "rare_list.txt"))
for note in rare:
    print("rare:", note.id, [d.diagnosis_name for d in note.differentials])
