"""Transformer encoder shared by the user request and the serialized catalog object."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .layers import (
    Params,
    init_attention,
    init_layer_norm,
    init_linear,
    layer_norm,
    linear,
    multi_head_attention,
    truncated_normal,
)
from .numerics import ContractError, Tensor
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, TokenSequence, Vocabulary, serialize_object, tokenize

PREFIX = "encoder"


class SequenceTooLongError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 2
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 256
    max_positions: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")


@dataclass
class EncoderOutput:
    embeddings: Tensor  # [p, D], or [B, p, D] when batched
    attention_mask: np.ndarray  # True on real (non-pad) positions

    @property
    def length(self) -> int:
        return int(self.attention_mask.sum())


def init_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d = config.model_dim
    params = {
        f"{PREFIX}.tok_emb": truncated_normal(rng, (config.vocab_size, d)),
        f"{PREFIX}.pos_emb": truncated_normal(rng, (config.max_positions, d)),
    }
    for i in range(config.num_layers):
        p = f"{PREFIX}.layers.{i}"
        params.update(init_attention(rng, f"{p}.attn", d))
        params.update(init_layer_norm(f"{p}.attn_norm", d))
        params.update(init_linear(rng, f"{p}.ffn_in", d, config.ffn_dim))
        params.update(init_linear(rng, f"{p}.ffn_out", config.ffn_dim, d))
        params.update(init_layer_norm(f"{p}.ffn_norm", d))
    return params


def wrap(ids: Sequence[int]) -> list[int]:
    return [BOS_ID, *ids, EOS_ID]


def pad_batch(seqs: Sequence[Sequence[int]], length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id lists into ``[B, L]`` ids plus a boolean mask of real positions."""
    length = max(len(s) for s in seqs) if length is None else length
    ids = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=bool)
    for row, seq in enumerate(seqs):
        if len(seq) > length:
            raise SequenceTooLongError(f"sequence of {len(seq)} tokens exceeds padded length {length}")
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = True
    return ids, mask


def encode_batch(
    ids: np.ndarray,
    mask: np.ndarray,
    params: Params,
    config: EncoderConfig,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Contextual embeddings ``[B, L, D]`` for padded id batches; pad rows come out zero.

    Dropout is applied only when ``rng`` is given.
    """
    bsz, length = ids.shape
    if length > config.max_positions:
        raise SequenceTooLongError(f"{length} tokens exceed max_positions={config.max_positions}")
    if not mask.any(axis=1).all():
        raise ContractError("encoder input with no real tokens")
    rate = config.dropout_rate if rng is not None else 0.0
    x = nx.embedding(params[f"{PREFIX}.tok_emb"], ids) + nx.take(params[f"{PREFIX}.pos_emb"], slice(0, length))
    x = nx.dropout(x, rate, rng)
    key_mask = mask[:, None, :]
    for i in range(config.num_layers):
        p = f"{PREFIX}.layers.{i}"
        h = multi_head_attention(x, x, key_mask, params, f"{p}.attn", config.num_heads)
        x = layer_norm(x + nx.dropout(h, rate, rng), params, f"{p}.attn_norm")
        h = linear(nx.gelu(linear(x, params, f"{p}.ffn_in")), params, f"{p}.ffn_out")
        x = layer_norm(x + nx.dropout(h, rate, rng), params, f"{p}.ffn_norm")
    return x * mask[:, :, None].astype(x.dtype)


def _params_of(weights) -> tuple[Mapping[str, Tensor], EncoderConfig]:
    return weights.params, weights.encoder


def encode(tokens: TokenSequence | Sequence[int], weights, pad_to: int | None = None) -> EncoderOutput:
    """Encode one token sequence, wrapped in [BOS] ... [EOS]."""
    params, config = _params_of(weights)
    ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
    seq = wrap(ids)
    if len(seq) > config.max_positions:
        raise SequenceTooLongError(f"{len(seq)} tokens exceed max_positions={config.max_positions}")
    arr, mask = pad_batch([seq], pad_to)
    out = encode_batch(arr, mask, params, config)
    return EncoderOutput(out.reshape(out.shape[1:]), mask[0])


def object_tokens(obj, vocab: Vocabulary) -> TokenSequence:
    return tokenize(serialize_object(obj), vocab)


def encode_object(obj, vocab: Vocabulary, weights, pad_to: int | None = None) -> EncoderOutput:
    """Encode a catalog object through its serialized string, with the shared encoder weights."""
    return encode(object_tokens(obj, vocab), weights, pad_to)
