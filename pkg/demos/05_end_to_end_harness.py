"""
Running, scoring and comparing methods end to end
=================================================

The harness has three stages that communicate through directories:
``run`` writes one trace per note and run, ``evaluate`` scores traces
against gold, and ``report`` compares evaluations with bootstrap
intervals and paired permutation tests.

The synthetic clinician answers every prompt. It never recalls more
evidence than the gold list holds, so gold diagnoses with only two items
cannot reach beta=3 and Dual-Inf drops them; expect it to trail the
single-pass baselines on diagnostic accuracy in this toy setting.
"""

import csv
import json
import tempfile
from pathlib import Path

from dualinf.corpus import load_corpus
from dualinf.harness import RunConfig, cmd_evaluate, cmd_report, cmd_run
from dualinf.synthetic import synthetic_backend

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"
dataset = DATA / "mini_corpus.jsonl"
corpus = load_corpus(dataset)
work = Path(tempfile.mkdtemp(prefix="dualinf-demo-"))

evals = []
for method in ("dual-inf", "cot", "sc-cot", "self-contrast"):
    res = cmd_run(RunConfig(str(dataset), method=method, runs=2, out=str(work / method)),
                  backends={"default": synthetic_backend(corpus)})
    print(f"{method:<14} exit {res.exit_code}, {res.backend_calls} backend calls")
    evals.append(cmd_evaluate(work / method, dataset, resamples=2000))

report = cmd_report(evals, work / "report", resamples=2000)

print("\nmean over runs with 95% bootstrap interval")
for row in csv.DictReader((report / "methods.csv").open()):
    if row["metric"] in ("diagnostic_accuracy", "interpretation_accuracy"):
        print(f"  {row['method']:<14} {row['metric']:<24} {float(row['mean']):.3f} "
              f"[{float(row['ci_low']):.3f}, {float(row['ci_high']):.3f}]")

summary = json.loads((evals[0] / "summary.json").read_text())
print("\nDual-Inf iterations used:", summary["iteration_histogram"])
print("artifacts in", work)
