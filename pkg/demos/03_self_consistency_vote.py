"""
Self-consistency voting over sampled reasoning paths
====================================================

The SC-CoT baseline samples five answers and keeps a diagnosis when at
least three paths name it. Evidence for a kept diagnosis survives when half
of the voting threshold (rounded up) of its paths cite it.
"""

from dualinf.baselines import consistency_vote
from dualinf.protocol import DdxEntry, DdxPrediction


def path(*items):
    return DdxPrediction([DdxEntry(name, list(ev)) for name, ev in items])


paths = [
    path(("Pneumonia", ["Fever", "Crackles"]), ("Bronchitis", ["Cough"])),
    path(("pneumonia", ["fever", "Hypoxemia"])),
    path(("Pneumonia", ["Crackles"]), ("Pulmonary embolism", ["Tachycardia"])),
    path(("Bronchitis", ["Cough", "Wheeze"]), ("Pneumonia", ["Fever"])),
    path(("Asthma", ["Wheeze"])),
]

# Names are compared after case and punctuation normalization
for threshold in range(1, 6):
    voted = consistency_vote(paths, threshold)
    print(f"threshold {threshold}: {[(e.name, e.evidence) for e in voted.entries]}")

# Raising the threshold can only remove diagnoses
