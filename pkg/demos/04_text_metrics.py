"""
Text-level scores for predicted evidence
========================================

Matched evidence lists are compared with METEOR (exact, stem and synonym
alignment with a fragmentation penalty), a greedy-matching BERTScore and a
sentence-level cosine similarity. Agreement between annotators uses Jaccard
overlap and Cohen's kappa.
"""

import numpy as np

from dualinf.backend import HashingEmbedder
from dualinf.metrics.agreement import cohen_kappa, jaccard
from dualinf.metrics.meteor import SynonymTable, meteor
from dualinf.metrics.similarity import bertscore, sentence_similarity

# A single matching word scores 0.5: the fragmentation penalty is largest
# when there is one chunk per matched word
print("fever / fever               ", meteor("fever", "fever"))
print("the cat sat / the cat sat   ", round(meteor("the cat sat", "the cat sat"), 6))
print("sat the cat / the cat sat   ", round(meteor("sat the cat", "the cat sat"), 6))
print("fevers / fever (stem)       ", meteor("fevers", "fever"))

syn = SynonymTable([("dyspnea", "breathlessness")])
print("dyspnea / breathlessness    ", meteor("dyspnea", "breathlessness"), "->",
      meteor("dyspnea", "breathlessness", synonyms=syn), "with a synonym table")

# BERTScore on unit vectors: each candidate row picks its best reference row
cand = np.array([[1.0, 0.0], [0.6, 0.8]])
ref = np.array([[1.0, 0.0], [0.0, 1.0]])
print("\nBERTScore (P, R, F1):", tuple(round(x, 4) for x in bertscore(cand, ref)))

# The offline hashing embedder stands in for a sentence-transformer model
emb = HashingEmbedder()
a, b = emb.embed(["left-sided chest pain", "chest pain on the left"])
print("sentence similarity:", round(sentence_similarity(a, b), 4))

print("\nJaccard {a,b} vs {b,c}:", jaccard({"a", "b"}, {"b", "c"}))
print("kappa:", cohen_kappa(list("xxxy"), list("xxyy")))
