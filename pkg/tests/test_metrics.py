from __future__ import annotations

import json
import random

import pytest

from kgdial import (
    ConsistencyCase,
    EvalReport,
    KnowledgeItem,
    PlanDecision,
    RetrievedEvidence,
    SampleEval,
    bleu1,
    consistency_value,
    evaluate,
    pc_kc,
    planning_f1,
    recall_at_1,
    report_to_json,
    report_to_obj,
    report_to_table,
    rouge_l,
)
from kgdial.backends import ConstantJudge, RuleJudge
from kgdial.errors import EmptyCandidateWarning, EmptyCorpus, JudgeFailure, NoEligibleSamples
from oracles import bleu1_oracle, rouge_l_oracle

NULL = PlanDecision()
P = PlanDecision(("PERSONA",))
BOTH = PlanDecision(("PERSONA", "DOCUMENTS"))


def sample(
    sid="s",
    gold=NULL,
    pred=NULL,
    response="r",
    reference="r",
    gold_persona=None,
    gold_knowledge=None,
    gold_persona_index=None,
    gold_knowledge_indices=None,
    retrieved=None,
) -> SampleEval:
    return SampleEval(
        sample_id=sid,
        gold_decision=gold,
        pred_decision=pred,
        gold_persona=gold_persona,
        gold_knowledge=gold_knowledge,
        gold_persona_index=gold_persona_index,
        gold_knowledge_indices=gold_knowledge_indices,
        retrieved=retrieved,
        response=response,
        reference=reference,
    )


def persona_sample(**kw):
    kw.setdefault("gold", P)
    kw.setdefault("pred", P)
    kw.setdefault("gold_persona", "I like tea")
    kw.setdefault("gold_persona_index", 0)
    return sample(**kw)


def both_sample(**kw):
    kw.setdefault("gold", BOTH)
    kw.setdefault("pred", BOTH)
    kw.setdefault("gold_persona", "I like tea")
    kw.setdefault("gold_persona_index", 0)
    kw.setdefault("gold_knowledge", "green tea fact")
    kw.setdefault("gold_knowledge_indices", (1,))
    return kw.pop("_maker", sample)(**kw)


def hit(source, key, rank=1, score=1.0):
    return RetrievedEvidence(KnowledgeItem(source, key, "t"), score, rank)


# --- consistency truth table -------------------------------------------------


def test_consistency_truth_table():
    # (has grounding, planner used source, judge verdict) -> value
    table = [
        ((True, True, True), 1.0),
        ((True, True, False), 0.0),
        ((True, False, None), 0.0),
        ((False, True, None), 0.0),
        ((False, False, None), 1.0),
    ]
    for (has, used, verdict), want in table:
        case = ConsistencyCase(has, used, verdict)
        assert consistency_value(case) == want


def test_consistency_case_verdict_iff_judged():
    with pytest.raises(ValueError):
        ConsistencyCase(True, True, None)  # judged path needs a verdict
    with pytest.raises(ValueError):
        ConsistencyCase(False, False, True)  # unjudged paths must not carry one
    with pytest.raises(ValueError):
        ConsistencyCase(True, False, False)


# --- sample validation ---------------------------------------------------


def test_sample_eval_gold_texts_iff_sources():
    with pytest.raises(ValueError):
        sample(gold=P)  # PERSONA in gold but no gold_persona text
    with pytest.raises(ValueError):
        sample(gold=NULL, gold_persona="stray")
    with pytest.raises(ValueError):
        both_sample(gold_knowledge=None, gold_knowledge_indices=None)


# --- planning F1 ----------------------------------------------------------


def test_planning_f1_hand_case():
    samples = [
        sample(gold=NULL, pred=NULL),
        sample(gold=NULL, pred=NULL),
        persona_sample(pred=P),
        persona_sample(pred=NULL),  # miss: predicted NULL
        both_sample(pred=BOTH),
    ]
    f1 = planning_f1(samples)
    # NULL: tp=2 fp=1 fn=0 -> p=2/3 r=1 -> f1=0.8; predicted count 3.
    assert f1["NULL"] == (pytest.approx(0.8), 3)
    # PERSONA: tp=1 fp=0 fn=1 -> p=1 r=0.5 -> f1=2/3.
    assert f1["PERSONA"] == (pytest.approx(2 / 3), 1)
    assert f1["BOTH"] == (pytest.approx(1.0), 1)


def test_planning_f1_zero_when_class_absent():
    samples = [sample(gold=NULL, pred=NULL)]
    f1 = planning_f1(samples)
    assert f1["PERSONA"] == (0.0, 0)
    assert f1["BOTH"] == (0.0, 0)


def test_planning_f1_reports_extra_classes():
    docs_only = PlanDecision(("DOCUMENTS",))
    samples = [sample(gold=NULL, pred=docs_only)]
    f1 = planning_f1(samples)
    assert set(f1) == {"NULL", "PERSONA", "BOTH", "DOCUMENTS"}
    assert f1["DOCUMENTS"] == (0.0, 1)


# --- recall@1 ----------------------------------------------------------------


def test_recall_at_1_persona_and_documents():
    samples = [
        persona_sample(retrieved={"PERSONA": [hit("PERSONA", (0,))]}),
        persona_sample(retrieved={"PERSONA": [hit("PERSONA", (2,))]}),
        both_sample(
            retrieved={
                "PERSONA": [hit("PERSONA", (0,))],
                "DOCUMENTS": [hit("DOCUMENTS", (0, 1))],
            }
        ),
    ]
    got = recall_at_1(samples)
    assert got["PERSONA"] == pytest.approx(2 / 3)
    assert got["DOCUMENTS"] == pytest.approx(1.0)


def test_recall_at_1_multi_gold_documents():
    s = both_sample(
        gold_knowledge_indices=(0, 2),
        retrieved={"DOCUMENTS": [hit("DOCUMENTS", (0, 2))]},
    )
    assert recall_at_1([s])["DOCUMENTS"] == 1.0
    s2 = both_sample(
        gold_knowledge_indices=(0, 2),
        retrieved={"DOCUMENTS": [hit("DOCUMENTS", (0, 1))]},
    )
    assert recall_at_1([s2])["DOCUMENTS"] == 0.0


def test_recall_at_1_missing_retrieval_is_a_miss():
    samples = [persona_sample(retrieved=None), persona_sample(retrieved={})]
    assert recall_at_1(samples)["PERSONA"] == 0.0


def test_recall_at_1_no_eligible():
    with pytest.raises(NoEligibleSamples):
        recall_at_1([sample(gold=NULL, pred=NULL)], sources=("PERSONA",))
    # Without explicit sources, ineligible ones are simply absent.
    assert recall_at_1([sample(gold=NULL, pred=NULL)]) == {}


# --- text metrics ------------------------------------------------------------


def test_bleu1_hand_values():
    assert bleu1("a b c d", "a b x d") == pytest.approx(0.75)
    # Shorter candidate pays the brevity penalty: e^(1 - 3/1).
    assert bleu1("a", "a b c") == pytest.approx(0.1353352832366127)
    assert bleu1("same words", "same words") == 1.0
    # Clipping: candidate repeats a token beyond its reference count.
    assert bleu1("a a a", "a b") == pytest.approx(1 / 3)


def test_bleu1_empty_candidate_warns_and_zeroes():
    with pytest.warns(EmptyCandidateWarning):
        assert bleu1("", "a b") == 0.0
    with pytest.warns(EmptyCandidateWarning):
        assert rouge_l("", "a b") == 0.0


def test_rouge_l_hand_value():
    # lcs("a c d", "a b c d") = 3; p=1, r=3/4, beta=1.2.
    b2 = 1.2 * 1.2
    want = (1 + b2) * 1.0 * 0.75 / (0.75 + b2 * 1.0)
    assert rouge_l("a c d", "a b c d") == pytest.approx(want)
    assert rouge_l("x y", "a b") == 0.0
    assert rouge_l("a b", "a b") == 1.0


def test_text_metrics_match_oracles_on_random_pairs():
    rng = random.Random(13)
    vocab = ["a", "b", "c", "d", "e", "f"]
    for _ in range(100):
        cand = rng.choices(vocab, k=rng.randint(1, 12))
        ref = rng.choices(vocab, k=rng.randint(1, 12))
        assert bleu1(" ".join(cand), " ".join(ref)) == pytest.approx(
            bleu1_oracle(cand, ref), abs=1e-9
        )
        assert rouge_l(" ".join(cand), " ".join(ref)) == pytest.approx(
            rouge_l_oracle(cand, ref), abs=1e-9
        )


# --- calibrated consistency ---------------------------------------------------


def test_pc_kc_with_rule_judge():
    good = "I like tea and biscuits"
    samples = [
        persona_sample(pred=P, response=good),  # judged true
        persona_sample(pred=NULL, response=good),  # missed use -> 0
        sample(gold=NULL, pred=P, response=good),  # spurious use -> 0
        sample(gold=NULL, pred=NULL, response=good),  # correct abstain -> 1
    ]
    pc, kc = pc_kc(samples, RuleJudge(threshold=0.5))
    assert pc == pytest.approx(2 / 4)
    # No sample grounds DOCUMENTS and none predicts it: all (F,F) -> 1.
    assert kc == pytest.approx(1.0)


def test_pc_kc_judge_verdict_matters():
    samples = [persona_sample(response="totally unrelated words")]
    pc_true, _ = pc_kc(samples, ConstantJudge(True))
    pc_rule, _ = pc_kc(samples, RuleJudge(threshold=0.5))
    assert pc_true == 1.0
    assert pc_rule == 0.0


def test_pc_kc_empty_raises():
    with pytest.raises(EmptyCorpus):
        pc_kc([], RuleJudge())


def test_judge_failure_carries_sample_id():
    class Broken:
        def judge(self, response, grounding):
            raise JudgeFailure("nli server down")

    with pytest.raises(JudgeFailure, match="s7"):
        pc_kc([persona_sample(sid="s7")], Broken())


# --- evaluate / report ----------------------------------------------------


def eval_samples():
    return [
        sample(gold=NULL, pred=NULL, response="hi there", reference="hi there"),
        persona_sample(
            response="I like tea indeed",
            reference="I like tea indeed",
            retrieved={"PERSONA": [hit("PERSONA", (0,))]},
        ),
        both_sample(
            response="I like tea so the green tea fact helps",
            reference="I like tea so the green tea fact helps",
            retrieved={
                "PERSONA": [hit("PERSONA", (0,))],
                "DOCUMENTS": [hit("DOCUMENTS", (0, 1))],
            },
        ),
    ]


def test_evaluate_end_to_end():
    report = evaluate(eval_samples(), RuleJudge(threshold=0.5))
    assert report.m == 3
    assert report.f1_per_class["NULL"] == (1.0, 1)
    assert report.recall_at_1 == {"PERSONA": 1.0, "DOCUMENTS": 1.0}
    assert report.bleu1 == 1.0
    assert report.rouge_l == 1.0
    assert report.pc == 1.0
    assert report.kc == 1.0


def test_report_json_is_sorted_and_stable():
    report = evaluate(eval_samples(), RuleJudge(threshold=0.5))
    text = report_to_json(report)
    obj = json.loads(text)
    assert list(obj) == sorted(obj)
    assert text == report_to_json(report)
    assert report_to_obj(report)["m"] == 3


def test_report_table_layout():
    report = EvalReport(
        m=4,
        f1_per_class={"NULL": (0.5, 2), "PERSONA": (1.0, 1), "BOTH": (0.25, 1)},
        recall_at_1={"PERSONA": 0.5},
        bleu1=0.125,
        rouge_l=0.25,
        pc=0.75,
        kc=1.0,
    )
    table = report_to_table(report)
    assert "samples: 4" in table
    assert "NULL         50.00  (2)" in table
    assert "BLEU1        12.50" in table
    assert "K.C         100.00" in table
