import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from retriever.data import build_pools
from retriever.evaluation import (
    EvalReport,
    evaluate_run,
    mean_rank,
    mrr,
    recall_at_k,
    resolve_threads,
    score_records,
)
from retriever.numerics import ContractError

rank_lists = st.lists(st.integers(1, 100), min_size=1, max_size=50)


class TestMetrics:
    def test_mrr_example(self):
        assert mrr([1, 2, 4]) == pytest.approx(0.58333, abs=1e-5)

    def test_all_first(self):
        assert mrr([1] * 7) == 1.0 and mean_rank([1] * 7) == 1.0

    def test_recall_example(self):
        assert recall_at_k([1, 6, 3], 5) == pytest.approx(2 / 3)
        assert recall_at_k([1, 6, 3], 100) == 1.0
        assert recall_at_k([1, 6, 3], 1) == pytest.approx(1 / 3)

    def test_mean_rank_example(self):
        assert mean_rank([1, 6, 3]) == pytest.approx(3.3333, abs=1e-4)

    def test_contract_errors(self):
        for fn in (mrr, mean_rank, lambda r: recall_at_k(r, 1)):
            with pytest.raises(ContractError):
                fn([])
        with pytest.raises(ContractError):
            mrr([0, 1])
        with pytest.raises(ContractError):
            recall_at_k([1], 0)

    def test_baseline_format(self):
        # 253 top hits among 1000 pools whose other ranks contribute nothing measurable
        ranks = [1] * 253 + [10**12] * 747
        assert EvalReport.from_ranks(ranks).to_json()["mrr"] == 0.253

    def test_uniform_random_ranking(self):
        rng = np.random.default_rng(0)
        ranks = rng.integers(1, 101, size=5000).tolist()
        assert abs(mean_rank(ranks) - 50.5) <= 2
        assert abs(mrr(ranks) - 0.052) <= 0.01

    @given(rank_lists)
    def test_bounds_and_monotonicity(self, ranks):
        r = EvalReport.from_ranks(ranks)
        assert 0 < r.mrr <= 1 and 1 <= r.mean_rank <= 100
        assert r.recall_at[1] <= r.recall_at[5] <= r.recall_at[10]
        assert r.mrr >= r.recall_at[1]

    @given(rank_lists, st.randoms(use_true_random=False))
    def test_order_independent(self, ranks, rnd):
        shuffled = list(ranks)
        rnd.shuffle(shuffled)
        assert EvalReport.from_ranks(ranks) == EvalReport.from_ranks(shuffled)


class TestReport:
    def test_json_keys_and_rounding(self):
        js = EvalReport.from_ranks([1, 2, 3]).to_json()
        assert list(js) == ["mrr", "r@1", "r@5", "r@10", "mean_rank", "n"]
        assert js["mrr"] == 0.611111 and js["n"] == 3

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("RETRIEVER_THREADS", "3")
        assert resolve_threads() == 3
        monkeypatch.setenv("RETRIEVER_THREADS", "0")
        assert resolve_threads() >= 1


class TestEvaluateRun:
    @pytest.fixture
    def setup(self, small_corpus, make_weights):
        catalog, turns, vocab = small_corpus
        w = make_weights(vocab_size=len(vocab), dim=16, seed=1, scale=0.3, max_positions=64)
        return build_pools(turns[:12], catalog, 6, seed=0), w, vocab

    def test_report_matches_exported_scores(self, setup, tmp_path):
        pools, w, vocab = setup
        run = evaluate_run(pools, w, vocab, threads=2)
        path = tmp_path / "scores.jsonl"
        path.write_text("".join(json.dumps(r) + "\n" for r in score_records(pools, run.rankings)))
        ranks = []
        for line, pool in zip(path.read_text().splitlines(), pools):
            rec = json.loads(line)
            totals = {s["index"]: s["total"] for s in rec["scores"]}
            truth = totals[pool.true_index]
            ranks.append(1 + sum(t > truth or (t == truth and i < pool.true_index) for i, t in totals.items()))
            assert ranks[-1] == rec["rank_of_true"]
        brute = {
            "mrr": sum(1 / r for r in ranks) / len(ranks),
            "r@1": sum(r <= 1 for r in ranks) / len(ranks),
            "mean_rank": sum(ranks) / len(ranks),
        }
        for k, v in brute.items():
            assert run.report.to_json()[k] == pytest.approx(v, rel=1e-5)

    def test_threads_do_not_change_result(self, setup):
        pools, w, vocab = setup
        a = evaluate_run(pools, w, vocab, threads=1)
        b = evaluate_run(pools, w, vocab, threads=4)
        assert a.report == b.report
        assert [r.order for r in a.rankings] == [r.order for r in b.rankings]

    def test_pool_order_independent(self, setup):
        pools, w, vocab = setup
        a = evaluate_run(pools, w, vocab, threads=1).report
        assert evaluate_run(pools[::-1], w, vocab, threads=1).report == a

    def test_empty(self, setup):
        _, w, vocab = setup
        with pytest.raises(ContractError):
            evaluate_run([], w, vocab)
