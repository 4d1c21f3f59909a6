import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vasekit.dataset import QuestionType
from vasekit.exceptions import EmptyRun, NonSquareMatrix, SchemaError, UnknownVaseId
from vasekit.metrics import (
    Prediction,
    SimilarityMatrix,
    evaluate_run,
    human_eval_summary,
    lcs_length,
    recall_at_k,
    rouge_l,
    true_ranks,
)
from vasekit.synthetic import fixture_manifest, fixture_predictions, shipped_human_eval_csv

from oracles import lcs, recall as oracle_recall, rouge as oracle_rouge


class TestRecall:
    def test_identity_dominant(self):
        m = np.eye(3) + 0.1
        assert recall_at_k(m, 1) == 1.0

    def test_one_row_ranked_second(self):
        m = [[0.5, 0.9, 0.1], [0.2, 0.8, 0.3], [0.1, 0.2, 0.7]]
        assert oracle_recall(m, 1) == pytest.approx(2 / 3)
        assert recall_at_k(m, 1) == pytest.approx(2 / 3)
        assert recall_at_k(m, 2) == 1.0

    def test_ties_favor_lower_column(self):
        m = [[0.5, 0.5], [0.5, 0.5]]
        assert list(true_ranks(m)) == [0, 1]
        assert recall_at_k(m, 1) == 0.5

    def test_k_beyond_n(self):
        rng = np.random.default_rng(1)
        assert recall_at_k(rng.random((4, 4)), 10) == 1.0

    def test_validation(self):
        with pytest.raises(NonSquareMatrix):
            recall_at_k(np.zeros((2, 3)), 1)
        with pytest.raises(ValueError):
            recall_at_k(np.zeros((2, 2)), 0)
        with pytest.raises(ValueError):
            SimilarityMatrix(np.array([[np.nan]]))

    def test_random_against_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            m = rng.integers(0, 4, size=(12, 12)).astype(float)  # coarse values force ties
            r = [recall_at_k(m, k) for k in (1, 5, 10)]
            assert r == [oracle_recall(m.tolist(), k) for k in (1, 5, 10)]
            assert r[0] <= r[1] <= r[2]


class TestRouge:
    def test_examples(self):
        assert rouge_l("the black figure amphora", "the black figure amphora") == 1.0
        assert rouge_l("kylix", "amphora") == 0.0
        assert oracle_rouge("the black figure amphora", "black figure amphora") == pytest.approx(6 / 7)
        assert rouge_l("the black figure amphora", "black figure amphora") == pytest.approx(6 / 7, abs=1e-12)
        assert rouge_l("", "amphora") == 0.0

    tok = st.lists(st.sampled_from("abcde"), max_size=30)

    @settings(max_examples=200)
    @given(tok, tok)
    def test_matches_oracle(self, a, b):
        assert lcs_length(a, b) == lcs(a, b)
        ca, cb = " ".join(a), " ".join(b)
        r = rouge_l(ca, cb)
        assert abs(r - oracle_rouge(ca, cb)) <= 1e-12
        assert 0.0 <= r <= 1.0
        if a:
            assert rouge_l(ca, ca) == 1.0


MANIFEST = fixture_manifest()


def _perfect():
    out = []
    for e in MANIFEST.entries:
        answers = {qa.question_type.value: qa.answer for qa in e.qa_pairs}
        out.append(Prediction(e.vase_id, e.caption, answers))
    return out


class TestEvaluateRun:
    def test_perfect_predictions(self):
        rep = evaluate_run(_perfect(), MANIFEST)
        assert rep.recall_at == {1: 1.0, 5: 1.0, 10: 1.0}
        assert rep.lexical_similarity == 1.0
        assert set(rep.per_dimension_accuracy.values()) == {1.0}
        assert rep.n_items == 20
        assert rep.to_dict()["fid"] is None

    def test_empty_answers_score_zero(self):
        preds = [Prediction(p.vase_id, p.caption, {k: "" for k in p.answers}) for p in _perfect()]
        assert set(evaluate_run(preds, MANIFEST).per_dimension_accuracy.values()) == {0.0}

    def test_normalized_exact_match(self):
        p = _perfect()[0]
        shouty = Prediction(p.vase_id, p.caption, {k: f"  {v.upper()}. " for k, v in p.answers.items()})
        sub = MANIFEST.entries[:1]
        from vasekit.dataset import DatasetManifest

        rep = evaluate_run([shouty], DatasetManifest(sub))
        assert rep.per_dimension_accuracy[QuestionType.SHAPE.value] == 1.0

    def test_order_invariance(self):
        preds = [Prediction.from_dict(d) for d in fixture_predictions(MANIFEST)]
        a = evaluate_run(preds, MANIFEST).to_dict()
        b = evaluate_run(list(reversed(preds)), MANIFEST).to_dict()
        assert a == b
        assert a["recall_at"]["1"] <= a["recall_at"]["5"] <= a["recall_at"]["10"]
        assert 0.0 < a["lexical_similarity"] < 1.0

    def test_errors(self):
        with pytest.raises(EmptyRun):
            evaluate_run([], MANIFEST)
        with pytest.raises(UnknownVaseId):
            evaluate_run([Prediction("nope", "x")], MANIFEST)
        p = _perfect()[0]
        with pytest.raises(SchemaError):
            evaluate_run([p, p], MANIFEST)
        with pytest.raises(SchemaError):
            Prediction.from_dict({"vase_id": ""})
        with pytest.raises(ValueError):
            Prediction.from_dict({"vase_id": "a", "answers": {"colour": "red"}})


class TestHumanEval:
    def test_shipped_matrix(self):
        rows = {r.method: r for r in human_eval_summary(shipped_human_eval_csv())}
        assert rows["VaseVLM-7B-RL"].mean == 4.57
        assert rows["VaseVLM-7B-RL"].rank == 1
        printed = {"VaseVLM-3B-RL": 4.37, "VaseVLM-7B-SFT": 4.17, "VaseVLM-3B-SFT": 3.97, "DiffuRank": 4.07,
                   "Gemini-2.5-flash": 3.87, "VaseVL": 3.77, "Claude-4-sonnet": 3.67, "Qwen2.5-VL-7B": 3.57,
                   "Gemini-2.5-Pro": 3.47}
        for name, mean in printed.items():
            assert rows[name].mean == mean
        # Ranks follow the means, which puts DiffuRank ahead of the 3B SFT model.
        assert rows["DiffuRank"].rank == 4 and rows["VaseVLM-3B-SFT"].rank == 5

    def test_half_up_and_ties(self):
        rows = human_eval_summary("m,e1,e2\na,4.0,4.25\nb,4.125,4.125\nc,1,1\n")
        assert [r.mean for r in rows] == [4.13, 4.13, 1.0]
        assert [r.rank for r in rows] == [1, 1, 3]

    def test_bad_rows(self):
        with pytest.raises(SchemaError):
            human_eval_summary("m,e1\na,high\n")
        with pytest.raises(EmptyRun):
            human_eval_summary("m,e1\n\n")
