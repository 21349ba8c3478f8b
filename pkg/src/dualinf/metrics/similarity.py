"""Embedding-based similarity: token-level BERTScore and sentence cosine."""

from __future__ import annotations

import numpy as np

__all__ = ["bertscore", "sentence_similarity"]


def _unit_rows(mat) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape[0] == 0:
        raise ValueError("need at least one token vector")
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm token vector")
    return mat / norms


def bertscore(candidate_vectors, reference_vectors) -> tuple[float, float, float]:
    """Greedy-matching BERTScore (no idf weighting, no baseline rescaling).

    Returns ``(precision, recall, f1)``.
    """
    cand = _unit_rows(candidate_vectors)
    ref = _unit_rows(reference_vectors)
    if cand.shape[1] != ref.shape[1]:
        raise ValueError(f"dimension mismatch: {cand.shape[1]} vs {ref.shape[1]}")
    sim = cand @ ref.T
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    denom = precision + recall
    f1 = 2 * precision * recall / denom if denom != 0 else 0.0
    return precision, recall, f1


def sentence_similarity(vec_a, vec_b) -> float:
    a = np.asarray(vec_a, dtype=float)
    b = np.asarray(vec_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
