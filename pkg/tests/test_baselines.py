from __future__ import annotations

import itertools
import random

import pytest
import scenarios as S
from helpers import brute_force_vote, pred
from hypothesis import given, settings
from hypothesis import strategies as st

from dualinf.backend import FunctionBackend, ScriptedBackend, Transcript
from dualinf.baselines import BaselineConfig, Method, consistency_vote, run_baseline
from dualinf.protocol import PromptKind, render_prediction, render_prompt

NAMES = ["Flu", "Cold", "COVID-19"]


def _vote_pairs(paths, t):
    return [(e.name, list(e.evidence)) for e in consistency_vote(paths, t).entries]


def test_unanimity_and_identity():
    p = pred(("Flu", ["Fever", "Cough"]), ("Cold", ["Sneezing"]))
    assert consistency_vote([p] * 5, 3).pairs() == p.pairs()
    assert consistency_vote([p], 1).pairs() == p.pairs()
    with pytest.raises(ValueError):
        consistency_vote([], 1)


def test_majority_semantics():
    with_d = pred(("D", ["x"]), ("E", ["y"]))
    without = pred(("E", ["y"]))
    assert "D" in consistency_vote([with_d] * 4 + [without], 3).names()
    assert "D" not in consistency_vote([with_d] * 2 + [without] * 3, 3).names()
    assert BaselineConfig(Method.SC_COT, paths=5).threshold == 3
    assert BaselineConfig(Method.SC_COT, paths=4).threshold == 3


def test_evidence_rule_and_ordering():
    paths = [
        pred(("Cold", ["Sneezing"]), ("Flu", ["Fever", "Myalgia"])),
        pred(("Flu", ["fever", "Chills"])),
        pred(("flu", ["Fever.", "Chills"]), ("Cold", ["Sneezing", "Sore throat"])),
        pred(("Asthma", ["Wheeze"])),
    ]
    # threshold 2: Flu 3 votes, Cold 2 votes; evidence needs ceil(2/2) = 1 path
    assert _vote_pairs(paths, 2) == [("Flu", ["Fever", "Myalgia", "Chills"]),
                                    ("Cold", ["Sneezing", "Sore throat"])]
    # threshold 3: only Flu; evidence needs 2 of its 3 paths
    assert _vote_pairs(paths, 3) == [("Flu", ["Fever", "Chills"])]


def test_name_repeated_within_path_counts_once():
    p = pred(("Flu", ["a"]))
    p.entries.append(p.entries[0].__class__("flu", ["b"]))
    assert consistency_vote([p, pred(("Cold", ["c"]))], 2).names() == []


def test_small_exhaustive_against_brute_force():
    rng = random.Random(3)
    subsets = [c for r in range(4) for c in itertools.combinations(NAMES, r)]
    for _ in range(400):
        paths = []
        for _ in range(rng.randint(1, 5)):
            names = list(rng.choice(subsets))
            rng.shuffle(names)
            paths.append(pred(*[(n, rng.sample(["a", "b", "c", "d"], rng.randint(0, 3))) for n in names]))
        for t in range(1, len(paths) + 1):
            assert _vote_pairs(paths, t) == brute_force_vote(paths, t)


_path = st.lists(st.tuples(st.sampled_from(NAMES), st.lists(st.sampled_from("abcd"), max_size=3, unique=True)),
                 max_size=3, unique_by=lambda x: x[0])


@settings(max_examples=200, deadline=None)
@given(st.lists(_path, min_size=1, max_size=6), st.randoms(use_true_random=False))
def test_vote_properties(raw, rnd):
    paths = [pred(*p) for p in raw]
    k = len(paths)
    sets = [set(consistency_vote(paths, t).names()) for t in range(1, k + 1)]
    for lo, hi in zip(sets, sets[1:]):
        assert hi <= lo  # anti-monotone in the threshold
    shuffled = list(paths)
    rnd.shuffle(shuffled)
    for t in range(1, k + 1):
        a, b = consistency_vote(paths, t), consistency_vote(shuffled, t)
        assert set(a.names()) == set(b.names())
        assert {e.key: sorted(e.evidence) for e in a.entries} == {e.key: sorted(e.evidence) for e in b.entries}


# --- run_baseline ------------------------------------------------------------

def _cot_transcript(kind, responses):
    p = render_prompt(kind, note=S.NOTE.note_text)
    t = Transcript()
    t.add(p.system_text, p.user_text, responses)
    return ScriptedBackend(t)


def test_cot_pass_through():
    answer = "Reasoning: chest trauma.\n\n" + render_prediction(pred(S.RIB, S.PNX))
    for method, kind in ((Method.COT, PromptKind.COT), (Method.DIAGNOSIS_COT, PromptKind.DIAGNOSIS_COT)):
        trace = run_baseline(S.NOTE, BaselineConfig(method), _cot_transcript(kind, answer))
        assert trace.final.pairs() == pred(S.RIB, S.PNX).pairs()
        assert trace.iterations_used == 1 and trace.raw_paths == [answer]


def test_sc_cot_paths_and_vote():
    d = ("D", ["x", "y"])
    e = ("E", ["z"])
    paths = [render_prediction(pred(d, e))] * 4 + [render_prediction(pred(e))]
    backend = _cot_transcript(PromptKind.COT, paths)
    trace = run_baseline(S.NOTE, BaselineConfig(Method.SC_COT), backend)
    assert trace.final.names() == ["E", "D"]
    assert len(trace.raw_paths) == 5 and backend.calls == 5
    assert trace.temperature == 0.1
    keys = {x["key"] for x in trace.exchanges}
    assert len(keys) == 5  # one cache slot per path


def test_sc_cot_drops_unparseable_path():
    d = ("D", ["x"])
    paths = [render_prediction(pred(d))] * 2 + ["no answer"] * 3
    trace = run_baseline(S.NOTE, BaselineConfig(Method.SC_COT), _cot_transcript(PromptKind.COT, paths))
    assert trace.status == "ok" and trace.final.names() == []
    assert trace.raw_paths[2:] == ["no answer"] * 3


def test_sc_cot_live_temperature():
    class Live(FunctionBackend):
        live = True

    seen = set()

    def fn(r, p):
        seen.add(r.temperature)
        return render_prediction(pred(("D", ["x"])))

    trace = run_baseline(S.NOTE, BaselineConfig(Method.SC_COT), Live(fn))
    assert seen == {0.7} and trace.temperature == 0.7
    assert BaselineConfig(Method.COT).temperature_for(Live(fn)) == 0.1


def test_self_contrast_flow():
    note = S.NOTE.note_text
    first, second = pred(S.RIB), pred(S.RIB, S.PNX)
    final = pred(S.RIB, S.PNX, S.HEMO)
    t = Transcript()
    for kind, ans in ((PromptKind.SELF_CONTRAST_SYMPTOM, first), (PromptKind.SELF_CONTRAST_RED_FLAG, second)):
        p = render_prompt(kind, note=note)
        t.add(p.system_text, p.user_text, render_prediction(ans))
    p = render_prompt(PromptKind.SELF_CONTRAST_CHECKLIST, note=note, first=first, second=second)
    t.add(p.system_text, p.user_text, "- Pneumothorax only in B")
    p = render_prompt(PromptKind.SELF_CONTRAST_REVISE, note=note, first=first, second=second,
                      checklist="- Pneumothorax only in B")
    t.add(p.system_text, p.user_text, render_prediction(final))
    trace = run_baseline(S.NOTE, BaselineConfig(Method.SELF_CONTRAST), ScriptedBackend(t))
    assert trace.final.pairs() == final.pairs()
    assert trace.intermediate["checklist"] == "- Pneumothorax only in B"
    assert [x["kind"] for x in trace.exchanges] == [
        "self_contrast_symptom", "self_contrast_red_flag", "self_contrast_checklist", "self_contrast_revise"]


def test_cot_failure_marks_trace():
    trace = run_baseline(S.NOTE, BaselineConfig(Method.COT), FunctionBackend(lambda r, p: "??"))
    assert trace.status == "failed"


def test_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(Method.SC_COT, paths=0)
    with pytest.raises(ValueError):
        BaselineConfig(Method.SC_COT, paths=5, vote_threshold=6)
