"""Run -> evaluate -> report stages over directories.

Layout written by :func:`cmd_run`::

    <out>/manifest.json
    <out>/traces/run-<k>/<note_id>.json

:func:`cmd_evaluate` writes ``per_note.jsonl``, ``summary.json``,
``per_specialty.csv`` and ``worksheet.csv``; :func:`cmd_report` writes
comparison tables and plot-ready CSVs. Every artifact carries the digest of
the configuration that produced it.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import os
from collections import Counter
from concurrent.futures import CancelledError, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backend import (
    AuthError,
    BackendError,
    ChatBackend,
    Embedder,
    HashingEmbedder,
    OpenAICompatBackend,
    ResponseCache,
    ScriptedBackend,
    Transcript,
)
from .baselines import BaselineConfig, Method, run_baseline
from .corpus import corpus_digest, filter_rare, filter_specialty, load_corpus, load_rare_list
from .engine import PipelineConfig, Variant, run_pipeline
from .metrics.errors import count_errors
from .metrics.meteor import SynonymTable
from .metrics.report import TEXT_METRICS, evaluate_predictions
from .metrics.stats import aggregate_runs, paired_comparison, quantiles
from .protocol import DdxPrediction, render_prediction

logger = logging.getLogger(__name__)

__all__ = [
    "EXIT_OK",
    "EXIT_FATAL",
    "EXIT_PARTIAL",
    "RunConfig",
    "RunResult",
    "HarnessError",
    "build_backend",
    "cmd_run",
    "cmd_evaluate",
    "cmd_report",
]

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

METHODS = ("cot", "diagnosis-cot", "sc-cot", "self-contrast", "dual-inf")
VARIANTS = ("dual-inf", "fi", "fi-em-star", "fi-em", "dual-inf-star")
ROLES = ("forward", "backward", "examination")


class HarnessError(RuntimeError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=1) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


@contextlib.contextmanager
def directory_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise HarnessError(f"{directory} is locked by another stage ({lock})") from None
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


@dataclass
class RunConfig:
    dataset: str
    method: str = "dual-inf"
    variant: str = "dual-inf"
    backends: dict = field(default_factory=dict)
    beta: int = 3
    max_iterations: int = 5
    runs: int = 5
    temperature: float = 0.1
    seed: int = 0
    subset: str = "all"
    rare_list: str | None = None
    paths: int = 5
    cache_dir: str | None = None
    out: str = "run"
    concurrency: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.runs < 1 or self.concurrency < 1:
            raise ValueError("runs and concurrency must be >= 1")

    @property
    def label(self) -> str:
        if self.method == "dual-inf" and self.variant != "dual-inf":
            return self.variant
        return self.method

    def semantic_dict(self, corpus_hash: str) -> dict:
        """Everything that can change results; paths and parallelism excluded."""
        d = asdict(self)
        for k in ("dataset", "cache_dir", "out", "concurrency", "rare_list"):
            d.pop(k)
        d["corpus_digest"] = corpus_hash
        d["backends"] = {role: _portable_spec(spec) for role, spec in self.backends.items()}
        if self.rare_list:
            d["rare_list_digest"] = hashlib.sha256(Path(self.rare_list).read_bytes()).hexdigest()
        return d

    def digest(self, corpus_hash: str) -> str:
        text = json.dumps(self.semantic_dict(corpus_hash), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _portable_spec(spec: dict) -> dict:
    spec = dict(spec)
    if "transcript" in spec:
        spec["transcript"] = hashlib.sha256(Path(spec["transcript"]).read_bytes()).hexdigest()
    return spec


def build_backend(spec: dict, cache: ResponseCache | None, concurrency: int = 8) -> ChatBackend:
    """``spec``: ``{"type": "scripted", "transcript": path}`` or
    ``{"type": "openai", "base_url": ..., "model_name": ..., "rate_per_s": ...}``."""
    kind = spec.get("type", "openai")
    if kind == "scripted":
        return ScriptedBackend(Transcript.load(spec["transcript"]), spec.get("id", "scripted"),
                               cache=cache, max_concurrency=concurrency)
    if kind == "openai":
        return OpenAICompatBackend(spec.get("id", spec["model_name"]), spec["base_url"],
                                   spec["model_name"], cache=cache, max_concurrency=concurrency,
                                   rate_per_s=spec.get("rate_per_s"))
    raise HarnessError(f"unknown backend type {kind!r}")


def _role_backends(config: RunConfig, cache, overrides=None) -> dict[str, ChatBackend]:
    overrides = overrides or {}
    built: dict[str, ChatBackend] = {}
    out = {}
    for role in (*ROLES, "baseline"):
        if role in overrides:
            out[role] = overrides[role]
            continue
        spec = config.backends.get(role) or config.backends.get("default")
        if spec is None:
            if "default" in overrides:
                out[role] = overrides["default"]
                continue
            raise HarnessError(f"no backend configured for role {role!r}")
        key = json.dumps(spec, sort_keys=True)
        if key not in built:
            built[key] = build_backend(spec, cache, config.concurrency)
        out[role] = built[key]
    return out


def select_subset(corpus, subset: str, rare_list: str | None = None):
    if subset == "all":
        return list(corpus)
    if subset == "rare":
        if not rare_list:
            raise HarnessError("subset 'rare' needs a rare-disease list")
        return filter_rare(corpus, load_rare_list(rare_list))
    if subset.startswith("specialty:"):
        return filter_specialty(corpus, subset.split(":", 1)[1])
    raise HarnessError(f"unknown subset {subset!r}")


@dataclass
class RunResult:
    out: Path
    exit_code: int
    failed: list[str]
    backend_calls: int


def _run_note(note, config: RunConfig, backends, run_index: int):
    if config.method == "dual-inf":
        pconf = PipelineConfig(config.beta, config.max_iterations,
                               Variant(config.variant.replace("-", "_")), config.temperature)
        return run_pipeline(note, pconf, backends, run_index)
    bconf = BaselineConfig(Method(config.method.replace("-", "_")), paths=config.paths,
                           temperature=None if config.method == "sc-cot" else config.temperature)
    return run_baseline(note, bconf, backends["baseline"], run_index)


def cmd_run(config: RunConfig, backends: dict[str, ChatBackend] | None = None) -> RunResult:
    """Execute the method over the selected notes ``config.runs`` times.

    ``backends`` maps roles (forward, backward, examination, baseline or
    default) to ready backends and takes precedence over ``config.backends``.
    """
    corpus = load_corpus(config.dataset)
    chash = corpus_digest(corpus)
    digest = config.digest(chash)
    notes = select_subset(corpus, config.subset, config.rare_list)
    out = Path(config.out)
    cache = ResponseCache(config.cache_dir) if config.cache_dir else None
    roles = _role_backends(config, cache, backends)
    distinct = {id(b): b for b in roles.values()}
    calls_before = sum(b.calls for b in distinct.values())

    manifest = {
        "config": config.semantic_dict(chash),
        "config_digest": digest,
        "corpus_digest": chash,
        "label": config.label,
        "note_ids": [n.id for n in notes],
        "runs": [],
        "complete": False,
        "fatal_error": None,
    }
    if config.method == "sc-cot" and any(b.live for b in distinct.values()):
        manifest["temperature_override"] = {"sc-cot": 0.7}

    fatal = None
    with directory_lock(out):
        for run_index in range(config.runs):
            traces = {}
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                futures = {n.id: pool.submit(_run_note, n, config, roles, run_index) for n in notes}
                for note_id, fut in futures.items():
                    try:
                        traces[note_id] = fut.result()
                    except CancelledError:
                        continue
                    except (AuthError, BackendError) as exc:
                        fatal = fatal or f"note {note_id}: {exc}"
                        for f in futures.values():
                            f.cancel()
            run_dir = out / "traces" / f"run-{run_index + 1}"
            statuses, responses = {}, {}
            for note_id in manifest["note_ids"]:
                trace = traces.get(note_id)
                if trace is None:
                    continue
                d = trace.to_dict()
                d["config_digest"] = digest
                d["run"] = run_index + 1
                _write(run_dir / f"{note_id}.json", _dumps(d))
                statuses[note_id] = trace.status
                joined = "".join(x["response_digest"] for x in trace.exchanges)
                responses[note_id] = hashlib.sha256(joined.encode()).hexdigest()[:16]
            manifest["runs"].append({"run": run_index + 1, "statuses": statuses,
                                     "response_digests": responses})
            if fatal:
                break
        failed = sorted({nid for r in manifest["runs"] for nid, s in r["statuses"].items()
                         if s != "ok"})
        manifest["failed"] = failed
        manifest["fatal_error"] = fatal
        manifest["complete"] = fatal is None
        _write(out / "manifest.json", _dumps(manifest))

    calls = sum(b.calls for b in distinct.values()) - calls_before
    if fatal:
        code = EXIT_FATAL
    elif failed and len(failed) == len(notes):
        code = EXIT_FATAL
    elif failed:
        code = EXIT_PARTIAL
    else:
        code = EXIT_OK
    return RunResult(out, code, failed, calls)


# --- evaluate ----------------------------------------------------------------

def _load_traces(run_dir: Path, manifest: dict) -> list[dict[str, dict]]:
    runs = []
    for r in manifest["runs"]:
        d = run_dir / "traces" / f"run-{r['run']}"
        runs.append({nid: json.loads((d / f"{nid}.json").read_text(encoding="utf-8"))
                     for nid in r["statuses"]})
    return runs


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


METRIC_KEYS = ("diagnostic_accuracy", "interpretation_accuracy", "diagnostic_precision",
               "interpretation_precision", *TEXT_METRICS)


def _note_metric(rec: dict, name: str) -> tuple[float, float]:
    if name == "diagnostic_accuracy":
        return rec["diagnosis"]["matched"], rec["diagnosis"]["total"]
    if name == "interpretation_accuracy":
        return rec["interpretation"]["matched"], rec["interpretation"]["total"]
    if name == "diagnostic_precision":
        return rec["diagnosis"]["predicted_matched"], rec["diagnosis"]["predicted_total"]
    if name == "interpretation_precision":
        return rec["interpretation"]["predicted_matched"], rec["interpretation"]["predicted_total"]
    return rec[name], 1.0


def _arrays(records: list[dict], note_ids: list[str], n_runs: int, name: str):
    num = np.zeros((n_runs, len(note_ids)))
    den = np.zeros((n_runs, len(note_ids)))
    col = {nid: i for i, nid in enumerate(note_ids)}
    for rec in records:
        a, b = _note_metric(rec, name)
        num[rec["run"] - 1, col[rec["note_id"]]] = a
        den[rec["run"] - 1, col[rec["note_id"]]] = b
    return num, den


def cmd_evaluate(run_dir, gold_path, match_mode: str = "exact",
                 judge_backend: ChatBackend | None = None, embedder: Embedder | None = None,
                 synonyms: SynonymTable | None = None, out=None,
                 resamples: int = 10_000, level: float = 0.95) -> Path:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    corpus = load_corpus(gold_path)
    if corpus_digest(corpus) != manifest["corpus_digest"]:
        raise HarnessError("gold corpus digest differs from the run manifest's")
    by_id = {r.id: r for r in corpus}
    missing = [nid for nid in manifest["note_ids"] if nid not in by_id]
    if missing:
        raise HarnessError(f"note ids missing from gold: {missing}")
    gold = [by_id[nid] for nid in manifest["note_ids"]]
    embedder = embedder or HashingEmbedder()
    seed = manifest["config"].get("seed", 0)
    digest = manifest["config_digest"]
    out = Path(out) if out else run_dir / "eval"

    with directory_lock(out):
        records = []
        error_flags = []
        runs = _load_traces(run_dir, manifest)
        for run_no, traces in enumerate(runs, start=1):
            preds = {nid: DdxPrediction.from_dict(t["final"]) for nid, t in traces.items()}
            report = evaluate_predictions(preds, gold, match_mode, embedder, synonyms,
                                          judge_backend, run_index=run_no - 1)
            for nid in manifest["note_ids"]:
                s = report.per_note[nid]
                t = traces.get(nid)
                rec = s.to_dict()
                rec.update(run=run_no, config_digest=digest, label=manifest["label"],
                           iterations_used=t["iterations_used"] if t else 0,
                           status=t["status"] if t else "missing")
                records.append(rec)
                error_flags.extend((run_no, f) for f in s.errors)

        note_ids = manifest["note_ids"]
        n_runs = len(runs)
        metrics = {}
        for name in METRIC_KEYS:
            num, den = _arrays(records, note_ids, n_runs, name)
            metrics[name] = aggregate_runs(num, den, resamples, level, seed).to_dict()

        specialties = sorted({r.specialty for r in gold})
        spec_rows = []
        for spec in specialties:
            cols = [i for i, nid in enumerate(note_ids) if by_id[nid].specialty == spec]
            row = {"specialty": spec, "notes": len(cols), "config_digest": digest}
            for name in METRIC_KEYS:
                num, den = _arrays(records, note_ids, n_runs, name)
                per_run = num[:, cols].sum(axis=1) / np.maximum(den[:, cols].sum(axis=1), 1e-300)
                row[name] = float(per_run.mean())
                row[name + "_std"] = float(per_run.std(ddof=0))
                if name in ("diagnostic_accuracy", "interpretation_accuracy"):
                    row[name + "_denominator"] = int(den[0, cols].sum())
            spec_rows.append(row)

        errors = count_errors(f for _, f in error_flags)
        errors["per_run_mean"] = {k: v / n_runs for k, v in errors["multi_label"].items()}
        coverage = float(np.mean([r["interpretation"]["coverage"] for r in records]))
        summary = {
            "config_digest": digest,
            "label": manifest["label"],
            "match_mode": match_mode,
            "runs": n_runs,
            "notes": len(note_ids),
            "metrics": metrics,
            "judge_coverage": coverage,
            "error_types": errors,
            "iteration_histogram": dict(sorted(Counter(
                str(r["iterations_used"]) for r in records).items(), key=lambda kv: int(kv[0]))),
        }
        _write(out / "summary.json", _dumps(summary))
        _write(out / "per_note.jsonl",
               "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records))
        cols = ["specialty", "notes", "config_digest"]
        for name in METRIC_KEYS:
            cols += [name, name + "_std"]
            if name in ("diagnostic_accuracy", "interpretation_accuracy"):
                cols.append(name + "_denominator")
        _write(out / "per_specialty.csv", _csv(spec_rows, cols))
        first = runs[0] if runs else {}
        sheet = [{"note_id": nid, "config_digest": digest,
                  "prediction": render_prediction(DdxPrediction.from_dict(first[nid]["final"]))
                  if nid in first else "",
                  "correctness": "", "completeness": "", "usefulness": ""}
                 for nid in note_ids]
        _write(out / "worksheet.csv", _csv(sheet, ["note_id", "config_digest", "prediction",
                                                   "correctness", "completeness", "usefulness"]))
    return out


# --- report ------------------------------------------------------------------

def _load_eval(eval_dir: Path) -> tuple[dict, list[dict]]:
    summary = json.loads((eval_dir / "summary.json").read_text(encoding="utf-8"))
    records = [json.loads(line) for line in
               (eval_dir / "per_note.jsonl").read_text(encoding="utf-8").splitlines() if line]
    return summary, records


def _fmt(x: float) -> str:
    return repr(round(float(x), 12))


def cmd_report(eval_dirs, out, resamples: int = 10_000, level: float = 0.95, seed: int = 0) -> Path:
    if not eval_dirs:
        raise HarnessError("report needs at least one evaluation directory")
    loaded = [_load_eval(Path(d)) for d in eval_dirs]
    labels = []
    for summary, _ in loaded:
        label = summary["label"]
        while label in labels:
            label += "'"
        labels.append(label)
    note_sets = [sorted({r["note_id"] for r in recs}) for _, recs in loaded]
    out = Path(out)
    digests = [s["config_digest"] for s, _ in loaded]

    method_rows, quant_rows, iter_rows, err_rows = [], [], [], []
    arrays = []
    for label, (summary, recs), notes in zip(labels, loaded, note_sets):
        n_runs = summary["runs"]
        per_metric = {m: _arrays(recs, notes, n_runs, m) for m in METRIC_KEYS}
        arrays.append(per_metric)
        for m in METRIC_KEYS:
            s = summary["metrics"][m]
            method_rows.append({"method": label, "metric": m, "mean": _fmt(s["mean"]),
                                "std": _fmt(s["std"]), "ci_low": _fmt(s["ci_low"]),
                                "ci_high": _fmt(s["ci_high"]), "config_digest": summary["config_digest"]})
            num, den = per_metric[m]
            with np.errstate(invalid="ignore", divide="ignore"):
                per_note = np.where(den > 0, num / np.where(den > 0, den, 1), 0.0).mean(axis=0)
            q = quantiles(per_note)
            quant_rows.append({"method": label, "metric": m,
                               **{k: _fmt(v) for k, v in q.items()},
                               "config_digest": summary["config_digest"]})
        hist = Counter((r["run"], r["iterations_used"]) for r in recs)
        for (run, iters), count in sorted(hist.items()):
            iter_rows.append({"method": label, "run": run, "iterations": iters, "count": count,
                              "config_digest": summary["config_digest"]})
        for etype, mean in summary["error_types"]["per_run_mean"].items():
            err_rows.append({"method": label, "error_type": etype, "count_per_run": _fmt(mean),
                             "config_digest": summary["config_digest"]})

    comparisons = []
    for i in range(len(loaded)):
        for j in range(i + 1, len(loaded)):
            if note_sets[i] != note_sets[j]:
                raise HarnessError(f"incompatible note sets: {labels[i]} vs {labels[j]}")
            for m in METRIC_KEYS:
                a_num, a_den = arrays[i][m]
                b_num, b_den = arrays[j][m]
                res = paired_comparison(a_num, b_num, a_den, b_den, resamples, level, seed)
                comparisons.append({"method_a": labels[i], "method_b": labels[j], "metric": m,
                                    "delta": _fmt(res.delta), "ci_low": _fmt(res.ci_low),
                                    "ci_high": _fmt(res.ci_high),
                                    "p_one_sided": _fmt(res.p_one_sided),
                                    "p_two_sided": _fmt(res.p_two_sided),
                                    "exact": res.exact,
                                    "config_digests": f"{digests[i]}|{digests[j]}"})

    with directory_lock(out):
        _write(out / "methods.csv", _csv(method_rows, list(method_rows[0])))
        _write(out / "quantiles.csv", _csv(quant_rows, list(quant_rows[0])))
        _write(out / "iterations.csv", _csv(iter_rows, ["method", "run", "iterations", "count",
                                                        "config_digest"]))
        _write(out / "errors.csv", _csv(err_rows, ["method", "error_type", "count_per_run",
                                                   "config_digest"]))
        _write(out / "comparison.csv", _csv(comparisons, [
            "method_a", "method_b", "metric", "delta", "ci_low", "ci_high", "p_one_sided",
            "p_two_sided", "exact", "config_digests"]))
        histograms = {}
        for row in iter_rows:
            h = histograms.setdefault(row["method"], {})
            h[str(row["iterations"])] = h.get(str(row["iterations"]), 0) + row["count"]
        _write(out / "report.json", _dumps({
            "config_digests": digests,
            "methods": labels,
            "iteration_histogram": histograms,
            "comparisons": comparisons,
        }))
    return out
