"""Inter-annotator agreement: Jaccard over sets, Cohen's kappa over labels."""

from __future__ import annotations

import warnings
from collections import Counter

__all__ = ["jaccard", "cohen_kappa", "mean_jaccard"]


def jaccard(set_a, set_b) -> float:
    a, b = set(set_a), set(set_b)
    if not a and not b:
        warnings.warn("jaccard of two empty sets is defined as 1.0", stacklevel=2)
        return 1.0
    return len(a & b) / len(a | b)


def mean_jaccard(pairs, key=None) -> float:
    """Average Jaccard over paired annotations, e.g. DDx sets per note."""
    scores = []
    for a, b in pairs:
        if key is not None:
            a, b = map(key, a), map(key, b)
        scores.append(jaccard(a, b))
    if not scores:
        raise ValueError("no annotation pairs")
    return sum(scores) / len(scores)


def cohen_kappa(labels_a, labels_b) -> float:
    labels_a, labels_b = list(labels_a), list(labels_b)
    if len(labels_a) != len(labels_b):
        raise ValueError(f"label sequences differ in length: {len(labels_a)} vs {len(labels_b)}")
    n = len(labels_a)
    if n == 0:
        raise ValueError("cohen_kappa needs at least one label pair")
    observed = sum(x == y for x, y in zip(labels_a, labels_b)) / n
    ca, cb = Counter(labels_a), Counter(labels_b)
    expected = sum(ca[k] * cb[k] for k in ca) / (n * n)
    if expected == 1:
        if observed == 1:
            return 1.0
        raise ValueError("kappa undefined: chance agreement is 1")
    return (observed - expected) / (1 - expected)
