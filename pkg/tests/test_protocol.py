from __future__ import annotations

import pytest
from helpers import TABLE4_BLOCK, pred
from hypothesis import given, settings
from hypothesis import strategies as st

from dualinf.engine import build_feedback
from dualinf.protocol import (
    FEEDBACK_MARKER,
    FORMAT_REMINDER,
    DdxEntry,
    DdxPrediction,
    MissingContext,
    PromptKind,
    Status,
    UnparseableOutput,
    parse_ddx_output,
    parse_recall_output,
    render_prediction,
    render_prompt,
    render_recall,
)
from dualinf.text import normalize_name

NOTE = "A 60-year-old man with two days of fever, productive cough and right-sided pleuritic pain."


# --- grammar -----------------------------------------------------------------

def test_table4_block_counts():
    parsed = parse_ddx_output(TABLE4_BLOCK.read_text(encoding="utf-8"))
    assert [(e.name, len(e.evidence)) for e in parsed.entries] == [
        ("Rib Fracture", 4), ("Pneumothorax", 4), ("Hemothorax", 3)]
    assert parsed.find("hemothorax").evidence[0] == "Left-sided chest pain following an MVA"


def test_render_canonical_form():
    text = render_prediction(pred(("Flu", ["Fever", 'Says "hot"'])))
    assert text == ('The patient may suffer from *Flu* because of the following symptoms or evidence:\n'
                    '"Fever", "Says \\"hot\\""')


def test_escapes_round_trip():
    p = pred(("Type *2* diabetes \\ variant", ['back\\slash', 'quote " inside', "a, b"]))
    assert parse_ddx_output(render_prediction(p)).pairs() == p.pairs()


@pytest.mark.parametrize("text", [
    # bold and bullets
    '- The patient may suffer from **Flu** because of the following symptoms or evidence:\n'
    '  "Fever", "Cough"',
    # numbering, curly quotes, lower case
    '1. the patient may suffer from *Flu* because of the following symptoms or evidence:\n'
    '“Fever”, “Cough”',
    # html italics and one item per line
    'The patient may suffer from <i>Flu</i> because of the following symptoms or evidence:\n'
    '"Fever"\n"Cough"',
    # underscore emphasis, chatter before and after
    'Sure. The patient may suffer from _Flu_ because of the following evidence:\n'
    '"Fever", "Cough"\nHope this helps.',
    # unmarked name
    'The patient may suffer from Flu because of the following symptoms or evidence: "Fever", "Cough"',
])
def test_tolerated_variants(text):
    assert parse_ddx_output(text).pairs() == [("Flu", ("Fever", "Cough"))]


def test_duplicate_blocks_merge_and_evidence_dedupes():
    text = render_prediction(pred(("Flu", ["Fever"]), ("Cold", ["Sneezing"]))) + "\n\n" + \
        render_prediction(pred(("flu", ["fever.", "Cough"])))
    assert parse_ddx_output(text).pairs() == [("Flu", ("Fever", "Cough")), ("Cold", ("Sneezing",))]


def test_header_without_evidence_yields_empty_list():
    text = "The patient may suffer from *Flu* because of the following symptoms or evidence:"
    assert parse_ddx_output(text).pairs() == [("Flu", ())]


@pytest.mark.parametrize("text", ["", "I am not sure.", '"Fever", "Cough"', None])
def test_malformed_is_unparseable(text):
    with pytest.raises(UnparseableOutput):
        parse_ddx_output(text)


def test_header_text_inside_evidence_is_not_a_header():
    p = pred(("Flu", ["The patient may suffer from *Cold* because of the weather"]))
    assert parse_ddx_output(render_prediction(p)).pairs() == p.pairs()


def test_recall_round_trip():
    recalled = {"Pneumonia": ["Fever", "Crackles"], "Pulmonary *edema*": ['"Pink" sputum']}
    assert parse_recall_output(render_recall(recalled)) == recalled
    with pytest.raises(UnparseableOutput):
        parse_recall_output("nothing here")


_NAME_CHARS = st.characters(blacklist_categories=("Cs", "Cc"), blacklist_characters="\n\r")
_names = st.text(_NAME_CHARS, min_size=1, max_size=20).filter(
    lambda s: s == s.strip() and normalize_name(s))
_evidence = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=25).filter(
    lambda s: s.strip())


@st.composite
def predictions(draw):
    names = draw(st.lists(_names, min_size=1, max_size=5, unique_by=normalize_name))
    entries = []
    for n in names:
        ev = draw(st.lists(_evidence, max_size=5, unique_by=normalize_name))
        entries.append(DdxEntry(n, ev))
    return DdxPrediction(entries)


@settings(max_examples=300, deadline=None)
@given(predictions())
def test_round_trip_fuzz(p):
    assert parse_ddx_output(render_prediction(p)).pairs() == p.pairs()


def test_prediction_dict_round_trip():
    p = DdxPrediction([DdxEntry("Flu", ["Fever"], Status.LOW_CONFIDENCE, 2, ["forward"])])
    q = DdxPrediction.from_dict(p.to_dict())
    assert q == p and q is not p
    assert p.accepted() == []


# --- prompts -----------------------------------------------------------------

def test_forward_prompt_shape():
    p = render_prompt(PromptKind.FORWARD, note=NOTE)
    assert NOTE in p.user_text and "*<diagnosis>*" in p.user_text
    assert FEEDBACK_MARKER not in p.user_text
    assert p.user_text.startswith("Read the patient note")


def test_forward_prompt_with_feedback_lists_names_once():
    fb = build_feedback(["Pulmonary Contusion", "pulmonary contusion"])
    p = render_prompt(PromptKind.FORWARD, note=NOTE, feedback=fb, accepted=["Rib Fracture"])
    assert p.user_text.count("Pulmonary Contusion") == 1
    assert FEEDBACK_MARKER in p.user_text
    assert "### Already accepted diagnoses\n- Rib Fracture" in p.user_text


def test_feedback_order_and_dedupe():
    fb = build_feedback(["B", "A", "b"])
    assert fb.names == ["B", "A"]
    with pytest.raises(ValueError):
        build_feedback([])


def test_examination_prompt_contents():
    fwd = pred(("Flu", ["Fever"]))
    p = render_prompt(PromptKind.EXAMINATION, note=NOTE, forward=fwd, recalled={"Flu": ["Myalgia"]})
    assert "### Recalled knowledge" in p.user_text and "Myalgia" in p.user_text
    assert render_prediction(fwd) in p.user_text
    with pytest.raises(MissingContext):
        render_prompt(PromptKind.EXAMINATION, note=NOTE, forward=fwd, recalled={})
    q = render_prompt(PromptKind.EXAMINATION, note=NOTE, forward=fwd, recalled={}, allow_no_recall=True)
    assert "Recalled knowledge" not in q.user_text


def test_backward_prompt_lists_diagnoses():
    p = render_prompt(PromptKind.BACKWARD, diagnoses=["Flu", "Cold"])
    assert "### Diagnoses\n- Flu\n- Cold" in p.user_text
    assert "laboratory test results" in p.user_text


@pytest.mark.parametrize("kind, ctx", [
    (PromptKind.FORWARD, {}),
    (PromptKind.BACKWARD, {"diagnoses": []}),
    (PromptKind.JUDGE_DIAGNOSIS, {"gold": "Flu"}),
    (PromptKind.SELF_CONTRAST_REVISE, {"note": NOTE, "first": "a", "second": "b"}),
])
def test_missing_context(kind, ctx):
    with pytest.raises(MissingContext):
        render_prompt(kind, **ctx)


def test_judge_prompts_end_with_reply_instruction():
    j = render_prompt(PromptKind.JUDGE_DIAGNOSIS, gold="Flu", predicted="Influenza")
    assert j.user_text.endswith("Reply MATCH or NO_MATCH.")
    e = render_prompt(PromptKind.ERROR_CLASSIFIER, diagnosis="Flu", item="Fever")
    assert e.user_text.endswith("Reply CONSISTENT, FACTUAL_ERROR or NOT_RELEVANT.")


def test_prompts_are_deterministic_and_distinct():
    kinds = [PromptKind.COT, PromptKind.DIAGNOSIS_COT, PromptKind.SELF_CONTRAST_SYMPTOM,
             PromptKind.SELF_CONTRAST_RED_FLAG]
    texts = [render_prompt(k, note=NOTE) for k in kinds]
    assert texts == [render_prompt(k, note=NOTE) for k in kinds]
    assert len({t.user_text for t in texts}) == 4


def test_format_reminder_mentions_grammar():
    assert "The patient may suffer from *<diagnosis>*" in FORMAT_REMINDER
