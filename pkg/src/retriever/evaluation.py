"""Retrieval metrics over ranked pools: MRR, recall@k and mean rank."""

from __future__ import annotations

import json
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .numerics import ContractError
from .scoring import Ranking, ScoringContext, rank_pool

RECALL_KS = (1, 5, 10)
THREADS_ENV = "RETRIEVER_THREADS"


def _check(ranks: Sequence[int]) -> np.ndarray:
    if len(ranks) == 0:
        raise ContractError("no ranks to aggregate")
    arr = np.asarray(ranks, dtype=np.int64)
    if (arr < 1).any():
        raise ContractError("ranks are 1-based")
    return arr


def mrr(ranks: Sequence[int]) -> float:
    arr = _check(ranks)
    # exact rational sum, rounded once
    total = sum(Fraction(c, int(r)) for r, c in Counter(arr.tolist()).items())
    return float(total / len(arr))


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    return float(np.mean(_check(ranks) <= k))


def mean_rank(ranks: Sequence[int]) -> float:
    return float(np.mean(_check(ranks)))


def _sig6(x: float) -> float:
    return float(f"{x:.6g}")


@dataclass(frozen=True)
class EvalReport:
    mrr: float
    recall_at: dict[int, float]
    mean_rank: float
    num_examples: int

    @classmethod
    def from_ranks(cls, ranks: Sequence[int]) -> "EvalReport":
        return cls(mrr(ranks), {k: recall_at_k(ranks, k) for k in RECALL_KS}, mean_rank(ranks), len(ranks))

    def to_json(self) -> dict:
        out = {"mrr": _sig6(self.mrr)}
        out.update({f"r@{k}": _sig6(v) for k, v in sorted(self.recall_at.items())})
        out["mean_rank"] = _sig6(self.mean_rank)
        out["n"] = self.num_examples
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=False)


def resolve_threads(value: str | int | None = None) -> int:
    if value is None:
        value = os.environ.get(THREADS_ENV, "0")
    n = int(value)
    return n if n > 0 else (os.cpu_count() or 1)


@dataclass
class EvalRun:
    report: EvalReport
    rankings: list[Ranking] = field(default_factory=list)


def evaluate_run(
    pools: Sequence,
    weights,
    vocab,
    use_grounding: bool = True,
    threads: int | None = None,
) -> EvalRun:
    """Rank every pool with the model and aggregate the metrics.

    Each pool must carry its user request and referred object.
    """
    if not pools:
        raise ContractError("no pools to evaluate")

    def rank_one(pool) -> Ranking:
        if pool.obj is None:
            raise ContractError(f"pool {pool.dialogue_id}/{pool.turn_index} has no referred object")
        ctx = ScoringContext(weights, vocab, pool.user_utterance, pool.obj, use_grounding=use_grounding)
        return rank_pool(pool, ctx)

    workers = resolve_threads(threads)
    if workers == 1:
        rankings = [rank_one(p) for p in pools]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rankings = list(ex.map(rank_one, pools))
    return EvalRun(EvalReport.from_ranks([r.rank_of_true for r in rankings]), rankings)


def score_records(pools: Sequence, rankings: Sequence[Ranking]) -> list[dict]:
    """Per-pool score export rows in pool order."""
    return [
        {
            "dialogue_id": p.dialogue_id,
            "turn_index": p.turn_index,
            "scores": [s.to_dict() for s in r.scores],
            "rank_of_true": r.rank_of_true,
        }
        for p, r in zip(pools, rankings)
    ]
