"""Candidate scoring: length-normalized log-likelihood plus a textual grounding score."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from . import decoder as dec
from . import encoder as enc
from .encoder import EncoderOutput, pad_batch
from .numerics import ContractError, Tensor, no_grad
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, Vocabulary, tokenize


@dataclass(frozen=True)
class CandidateScore:
    candidate_index: int
    score_ll: float
    score_gr: float
    total: float

    def to_dict(self) -> dict:
        return {"index": self.candidate_index, "score_ll": self.score_ll, "score_gr": self.score_gr, "total": self.total}


@dataclass(frozen=True)
class Ranking:
    order: tuple[int, ...]
    rank_of_true: int
    scores: tuple[CandidateScore, ...] = field(default=(), compare=False)


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def token_log_likelihoods(logits: Tensor | np.ndarray, candidate_ids: Sequence[int]) -> list[float]:
    """Log-probability of each token after [BOS], read from the preceding position's logits.

    ``candidate_ids`` is the wrapped candidate ``[BOS] ... [EOS]``; ``logits``
    come from decoding it without the final token. [PAD] targets are skipped.
    """
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    ids = list(candidate_ids)
    if data.ndim != 2 or data.shape[0] != len(ids) - 1:
        raise ContractError(f"logits of shape {data.shape} do not match {len(ids)} candidate ids")
    logp = _log_softmax64(data)
    return [float(logp[i, t]) for i, t in enumerate(ids[1:]) if t != PAD_ID]


def score_ll(lls: Sequence[float]) -> float:
    if len(lls) == 0:
        raise ContractError("score_ll of an empty list")
    return float(np.mean(np.asarray(lls, dtype=np.float64)))


@lru_cache(maxsize=4096)
def _value_pattern(value: str) -> re.Pattern:
    words = value.split()
    if not words:
        raise ContractError("attribute value is empty")
    body = r"\s+".join(re.escape(w) for w in words)
    # \b fails next to punctuation-edged values such as "$10"; lookarounds do not
    return re.compile(rf"(?<!\w){body}(?!\w)", re.IGNORECASE)


def omega_match(candidate_text: str, attribute_value: str) -> int:
    """1 if ``attribute_value`` occurs in the text as a whole word or phrase, ignoring case."""
    return int(_value_pattern(attribute_value.strip()).search(candidate_text) is not None)


def score_grounding(candidate_text: str, obj) -> float:
    """Fraction of the object's attributes with at least one value mentioned in the text."""
    attributes: Mapping[str, Sequence[str]] = getattr(obj, "attributes", obj)
    if not attributes:
        return 0.0
    hits = sum(any(omega_match(candidate_text, v) for v in values) for values in attributes.values())
    return hits / len(attributes)


def combine(index: int, ll: float, gr: float, use_grounding: bool = True) -> CandidateScore:
    return CandidateScore(index, ll, gr, ll + gr if use_grounding else ll)


def rank_scores(scores: Sequence[CandidateScore], true_index: int) -> Ranking:
    """Sort by descending total, ties by ascending candidate index."""
    if not scores:
        raise ContractError("cannot rank an empty pool")
    order = tuple(s.candidate_index for s in sorted(scores, key=lambda s: (-s.total, s.candidate_index)))
    return Ranking(order, order.index(true_index) + 1, tuple(scores))


@dataclass
class ScoringContext:
    """Everything needed to score candidates for one request about one object."""

    weights: object
    vocab: Vocabulary
    utterance: str
    obj: object
    use_grounding: bool = True
    use_likelihood: bool = True
    _encodings: tuple | None = field(default=None, repr=False)

    def encodings(self) -> tuple[EncoderOutput, EncoderOutput]:
        if self._encodings is None:
            with no_grad():
                u = enc.encode(tokenize(self.utterance, self.vocab), self.weights)
                o = enc.encode_object(self.obj, self.vocab, self.weights)
            self._encodings = (u, o)
        return self._encodings


def candidate_ids(text: str, vocab: Vocabulary) -> list[int]:
    return [BOS_ID, *tokenize(text, vocab).ids, EOS_ID]


def pool_log_likelihoods(candidates: Sequence[str], ctx: ScoringContext) -> list[float]:
    """Normalized log-likelihood of every candidate, decoded as one padded batch."""
    utt, obj = ctx.encodings()
    wrapped = [candidate_ids(c, ctx.vocab) for c in candidates]
    ids, mask = pad_batch([w[:-1] for w in wrapped])
    with no_grad():
        logits = dec.decode_batch(
            utt.embeddings.reshape(1, *utt.embeddings.shape),
            utt.attention_mask[None, :],
            obj.embeddings.reshape(1, *obj.embeddings.shape),
            obj.attention_mask[None, :],
            ids,
            mask,
            ctx.weights.params,
            ctx.weights.decoder,
        )
    out = []
    for row, w in enumerate(wrapped):
        out.append(score_ll(token_log_likelihoods(logits.data[row, : len(w) - 1], w)))
    return out


def score_candidate(candidate: str, ctx: ScoringContext, index: int = 0) -> CandidateScore:
    ll = pool_log_likelihoods([candidate], ctx)[0] if ctx.use_likelihood else 0.0
    return combine(index, ll, score_grounding(candidate, ctx.obj), ctx.use_grounding)


def score_pool(candidates: Sequence[str], ctx: ScoringContext) -> list[CandidateScore]:
    if not candidates:
        raise ContractError("cannot score an empty pool")
    lls = pool_log_likelihoods(candidates, ctx) if ctx.use_likelihood else [0.0] * len(candidates)
    return [
        combine(i, ll, score_grounding(text, ctx.obj), ctx.use_grounding)
        for i, (text, ll) in enumerate(zip(candidates, lls))
    ]


def rank_pool(pool, ctx: ScoringContext) -> Ranking:
    """Score every candidate of ``pool`` and rank them; ``pool`` has ``candidates`` and ``true_index``."""
    if not pool.candidates:
        raise ContractError("cannot rank an empty pool")
    return rank_scores(score_pool(pool.candidates, ctx), pool.true_index)
