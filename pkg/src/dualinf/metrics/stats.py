"""Run aggregation: mean/std over runs, note-level percentile bootstrap CIs,
and paired comparisons between two methods.

Scores are passed as per-note numerator and denominator arrays of shape
``(runs, notes)``; the corpus statistic of one run is ``sum(num) / sum(den)``.
Mean-type metrics use a denominator of ones. Standard deviations are
population (ddof=0).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = ["RunSummary", "PairedResult", "aggregate_runs", "paired_comparison", "quantiles"]

DEFAULT_RESAMPLES = 10_000
_TIE_EPS = 1e-12


def _as_runs(values, denominators=None) -> tuple[np.ndarray, np.ndarray]:
    num = np.atleast_2d(np.asarray(values, dtype=float))
    den = np.ones_like(num) if denominators is None else np.atleast_2d(np.asarray(denominators, dtype=float))
    if num.shape != den.shape:
        raise ValueError(f"numerator shape {num.shape} != denominator shape {den.shape}")
    if num.shape[0] < 1 or num.shape[1] < 1:
        raise ValueError("need at least one run and one note")
    return num, den


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    tot = den.sum(axis=-1)
    return np.divide(num.sum(axis=-1), tot, out=np.zeros_like(tot), where=tot != 0)


def _boot_stat(num, den, idx) -> np.ndarray:
    # idx: (B, n) note indices; result: (B,) run-averaged corpus statistic
    return _ratio(num[:, idx], den[:, idx]).mean(axis=0)


@dataclass
class RunSummary:
    mean: float
    std: float
    ci_low: float
    ci_high: float
    level: float
    runs: list[float]
    resamples: int
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PairedResult:
    delta: float
    ci_low: float
    ci_high: float
    level: float
    p_one_sided: float
    p_two_sided: float
    exact: bool
    permutations: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _percentile_ci(samples: np.ndarray, level: float) -> tuple[float, float]:
    alpha = (1 - level) / 2
    lo, hi = np.quantile(samples, [alpha, 1 - alpha])
    return float(lo), float(hi)


def aggregate_runs(values, denominators=None, resamples: int = DEFAULT_RESAMPLES,
                   level: float = 0.95, seed: int = 0) -> RunSummary:
    """Mean and population std of the per-run statistic, plus a percentile
    bootstrap CI over notes (the same note indices are used for every run)."""
    num, den = _as_runs(values, denominators)
    per_run = _ratio(num, den)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, num.shape[1], size=(resamples, num.shape[1]))
    lo, hi = _percentile_ci(_boot_stat(num, den, idx), level)
    return RunSummary(float(per_run.mean()), float(per_run.std(ddof=0)), lo, hi, level,
                      [float(x) for x in per_run], resamples, seed)


def _sign_masks(n: int, resamples: int, rng) -> tuple[np.ndarray, bool]:
    if 2 ** n <= resamples:
        masks = np.array(list(itertools.product((False, True), repeat=n)), dtype=bool)
        return masks, True
    return rng.random((resamples, n)) < 0.5, False


def paired_comparison(a_values, b_values, a_denominators=None, b_denominators=None,
                      resamples: int = DEFAULT_RESAMPLES, level: float = 0.95,
                      seed: int = 0) -> PairedResult:
    """Difference A - B with a paired bootstrap CI and a paired permutation test.

    The permutation test swaps each note's A/B scores. With ``2**notes <=
    resamples`` every swap pattern is enumerated and the p-value is exact;
    otherwise ``resamples`` random patterns are drawn and ``(1 + k) / (1 + B)``
    is reported.
    """
    a_num, a_den = _as_runs(a_values, a_denominators)
    b_num, b_den = _as_runs(b_values, b_denominators)
    if a_num.shape[1] != b_num.shape[1]:
        raise ValueError("paired comparison needs the same notes for both methods")
    n = a_num.shape[1]
    observed = float(_ratio(a_num, a_den).mean() - _ratio(b_num, b_den).mean())

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(resamples, n))
    boot = _boot_stat(a_num, a_den, idx) - _boot_stat(b_num, b_den, idx)
    lo, hi = _percentile_ci(boot, level)

    masks, exact = _sign_masks(n, resamples, rng)
    deltas = np.empty(len(masks))
    for k, m in enumerate(masks):
        sa_num = np.where(m, b_num, a_num)
        sa_den = np.where(m, b_den, a_den)
        sb_num = np.where(m, a_num, b_num)
        sb_den = np.where(m, a_den, b_den)
        deltas[k] = _ratio(sa_num, sa_den).mean() - _ratio(sb_num, sb_den).mean()
    ge = int(np.sum(deltas >= observed - _TIE_EPS))
    abs_ge = int(np.sum(np.abs(deltas) >= abs(observed) - _TIE_EPS))
    if exact:
        p1, p2 = ge / len(masks), abs_ge / len(masks)
    else:
        p1, p2 = (1 + ge) / (1 + len(masks)), (1 + abs_ge) / (1 + len(masks))
    return PairedResult(observed, lo, hi, level, p1, min(1.0, p2), exact, len(masks))


def quantiles(values) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("no values")
    q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75])
    return {"min": float(arr.min()), "q1": float(q1), "median": float(med),
            "q3": float(q3), "max": float(arr.max()), "mean": float(arr.mean())}
