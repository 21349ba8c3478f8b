"""Unigram METEOR with staged exact / stem / synonym alignment.

Each stage pairs the tokens left unaligned by earlier stages, taking as many
pairs as possible. Within a stage the pair count is fixed by the token class
sizes, so the only freedom is *which* occurrences pair up; among those
choices the alignment with the fewest chunks is used.

    P = m / |candidate|, R = m / |reference|
    Fmean = 10 P R / (R + 9 P)
    penalty = 0.5 * (chunks / m) ** 3
    score = Fmean * (1 - penalty)
"""

from __future__ import annotations

import itertools
import math
import re
from functools import lru_cache
from pathlib import Path
from typing import Callable

from nltk.stem.porter import PorterStemmer

__all__ = ["tokenize", "porter_stem", "SynonymTable", "load_synonyms", "align", "count_chunks", "meteor"]

# alignments enumerated exhaustively up to this many candidates
EXHAUSTIVE_LIMIT = 20000

_WORD = re.compile(r"\w+", re.UNICODE)
_PORTER = PorterStemmer()


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.casefold())


@lru_cache(maxsize=65536)
def porter_stem(token: str) -> str:
    return _PORTER.stem(token)


class SynonymTable:
    """Symmetric, transitive synonym groups keyed by stemmed single tokens."""

    def __init__(self, pairs=(), stemmer: Callable[[str], str] = porter_stem):
        self.stemmer = stemmer
        self._parent: dict[str, str] = {}
        for a, b in pairs:
            self._union(self._key(a), self._key(b))

    def _key(self, term: str) -> str:
        return self.stemmer(term.strip().casefold())

    def _find(self, x: str) -> str:
        self._parent.setdefault(x, x)
        while self._parent[x] != x:
            self._parent[x] = self._parent[self._parent[x]]
            x = self._parent[x]
        return x

    def _union(self, a: str, b: str) -> None:
        ra, rb = self._find(a), self._find(b)
        if ra != rb:
            self._parent[max(ra, rb)] = min(ra, rb)

    def group(self, stem: str) -> str | None:
        return self._find(stem) if stem in self._parent else None


def load_synonyms(path: str | Path, stemmer=porter_stem) -> SynonymTable:
    """Read ``term<TAB>synonym`` lines; blank lines and ``#`` comments are skipped."""
    pairs = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        term, _, syn = line.partition("\t")
        if not term.strip() or not syn.strip():
            raise ValueError(f"{path}:{n}: expected 'term<TAB>synonym'")
        pairs.append((term, syn))
    return SynonymTable(pairs, stemmer)


def _stage_keys(stemmer, synonyms: SynonymTable | None):
    stages = [lambda t: t]
    if stemmer is not None:
        stages.append(stemmer)
    if synonyms is not None:
        stem = stemmer or (lambda t: t)
        stages.append(lambda t: synonyms.group(stem(t)))
    return stages


def count_chunks(pairs) -> int:
    """Runs of pairs adjacent and in order on both sides."""
    chunks = 0
    prev = None
    for i, j in sorted(pairs):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def _class_options(cands: list[int], refs: list[int]):
    if len(cands) <= len(refs):
        for perm in itertools.permutations(refs, len(cands)):
            yield list(zip(cands, perm))
    else:
        for perm in itertools.permutations(cands, len(refs)):
            yield list(zip(perm, refs))


def _lazy_product(groups):
    # itertools.product would materialize every class's permutations up front
    if not groups:
        yield []
        return
    (cs, rs), rest = groups[0], groups[1:]
    for part in _class_options(cs, rs):
        for tail in _lazy_product(rest):
            yield part + tail


def _alignments(candidate, reference, stages, free_c, free_r):
    """Yield every staged-maximal alignment; order-preserving pairings come first."""
    if not stages:
        yield []
        return
    key_fn = stages[0]
    groups_c: dict[str, list[int]] = {}
    groups_r: dict[str, list[int]] = {}
    for i in sorted(free_c):
        k = key_fn(candidate[i])
        if k is not None:
            groups_c.setdefault(k, []).append(i)
    for j in sorted(free_r):
        k = key_fn(reference[j])
        if k is not None:
            groups_r.setdefault(k, []).append(j)
    groups = [(cs, groups_r[k]) for k, cs in groups_c.items() if k in groups_r]
    for pairs in _lazy_product(groups):
        used_c = {i for i, _ in pairs}
        used_r = {j for _, j in pairs}
        for rest in _alignments(candidate, reference, stages[1:],
                                free_c - used_c, free_r - used_r):
            yield pairs + rest


def align(candidate: list[str], reference: list[str], stemmer=porter_stem,
          synonyms: SynonymTable | None = None) -> list[tuple[int, int]]:
    """Staged maximal alignment with the fewest chunks.

    The search is exhaustive for up to ``EXHAUSTIVE_LIMIT`` alignments; beyond
    that the best of the first ``EXHAUSTIVE_LIMIT`` (order-preserving first) wins.
    """
    stages = _stage_keys(stemmer, synonyms)
    found = _alignments(candidate, reference, stages,
                        frozenset(range(len(candidate))), frozenset(range(len(reference))))
    best, best_chunks = [], math.inf
    for pairs in itertools.islice(found, EXHAUSTIVE_LIMIT):
        ch = count_chunks(pairs)
        if ch < best_chunks:
            best, best_chunks = pairs, ch
            if ch <= 1:
                break
    return sorted(best)


def meteor(candidate: str, reference: str, stemmer=porter_stem,
           synonyms: SynonymTable | None = None) -> float:
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    pairs = align(cand, ref, stemmer, synonyms)
    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(cand)
    recall = m / len(ref)
    fmean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (count_chunks(pairs) / m) ** 3
    return fmean * (1 - penalty)
