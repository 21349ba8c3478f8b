from .accuracy import (
    AccuracyReport,
    Counts,
    ExactMatcher,
    JudgeMatcher,
    diagnostic_accuracy,
    interpretation_accuracy,
    make_matcher,
    match_diagnoses,
)
from .agreement import cohen_kappa, jaccard, mean_jaccard
from .errors import ErrorFlags, ErrorType, classify_error, count_errors
from .meteor import SynonymTable, load_synonyms, meteor
from .report import MetricReport, NoteScores, evaluate_predictions, score_note
from .similarity import bertscore, sentence_similarity
from .stats import PairedResult, RunSummary, aggregate_runs, paired_comparison, quantiles

__all__ = [
    "AccuracyReport",
    "Counts",
    "ExactMatcher",
    "JudgeMatcher",
    "diagnostic_accuracy",
    "interpretation_accuracy",
    "make_matcher",
    "match_diagnoses",
    "cohen_kappa",
    "jaccard",
    "mean_jaccard",
    "ErrorFlags",
    "ErrorType",
    "classify_error",
    "count_errors",
    "SynonymTable",
    "load_synonyms",
    "meteor",
    "MetricReport",
    "NoteScores",
    "evaluate_predictions",
    "score_note",
    "bertscore",
    "sentence_similarity",
    "PairedResult",
    "RunSummary",
    "aggregate_runs",
    "paired_comparison",
    "quantiles",
]
