"""Multi-attentive decoder.

Each block runs three attentions in sequence: masked self-attention over the
candidate, attention over the encoded user request, attention over the
encoded object. Every attention is followed by a highway connection and
layer normalization. A final linear layer maps to vocabulary logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .encoder import EncoderOutput, SequenceTooLongError
from .layers import (
    Params,
    causal_mask,
    init_attention,
    init_layer_norm,
    init_linear,
    layer_norm,
    linear,
    multi_head_attention,
    truncated_normal,
)
from .numerics import ContractError, Tensor
from .tokenizer import BOS_ID, TokenSequence

PREFIX = "decoder"
SUBLAYERS = ("self", "utt", "obj")


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    num_layers: int = 1
    model_dim: int = 64
    num_heads: int = 4
    max_positions: int = 64
    dropout_rate: float = 0.1
    memory_dim: int | None = None  # encoder width; defaults to model_dim

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")

    @property
    def kv_dim(self) -> int:
        return self.model_dim if self.memory_dim is None else self.memory_dim


@dataclass
class DecoderState:
    self_out: list[Tensor]  # y_self per block
    utt_out: list[Tensor]  # y_utt per block
    final: Tensor  # s_1..s_c


def init_params(config: DecoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d = config.model_dim
    params = {
        f"{PREFIX}.tok_emb": truncated_normal(rng, (config.vocab_size, d)),
        f"{PREFIX}.pos_emb": truncated_normal(rng, (config.max_positions, d)),
    }
    for i in range(config.num_layers):
        p = f"{PREFIX}.layers.{i}"
        for name in SUBLAYERS:
            params.update(init_attention(rng, f"{p}.{name}", d, d if name == "self" else config.kv_dim))
            params.update(init_linear(rng, f"{p}.{name}_gate", d, d))
            params.update(init_layer_norm(f"{p}.{name}_norm", d))
    params.update(init_linear(rng, f"{PREFIX}.logits", d, config.vocab_size))
    return params


def highway(x: Tensor, transformed: Tensor, params: Params, prefix: str) -> Tensor:
    """``t * H + (1 - t) * x`` with gate ``t = sigmoid(x W_t + b_t)``, then layer norm."""
    gate = nx.sigmoid(linear(x, params, f"{prefix}_gate"))
    return layer_norm(x + gate * (transformed - x), params, f"{prefix}_norm")


def decode_batch(
    utt: Tensor,
    utt_mask: np.ndarray,
    obj: Tensor,
    obj_mask: np.ndarray,
    ids: np.ndarray,
    mask: np.ndarray,
    params: Params,
    config: DecoderConfig,
    rng: np.random.Generator | None = None,
    state: DecoderState | None = None,
) -> Tensor:
    """Logits ``[B, c, V]`` for teacher-forced inputs ``ids`` (each row starting with [BOS])."""
    bsz, length = ids.shape
    if length == 0:
        raise ContractError("empty candidate")
    if length > config.max_positions:
        raise SequenceTooLongError(f"{length} tokens exceed decoder max_positions={config.max_positions}")
    if not (ids[:, 0] == BOS_ID).all():
        raise ContractError("decoder inputs must start with [BOS]")
    if not utt_mask.any(axis=-1).all():
        raise ContractError("utterance encoding is fully padded")
    if not obj_mask.any(axis=-1).all():
        raise ContractError("object encoding is fully padded")

    rate = config.dropout_rate if rng is not None else 0.0
    x = nx.embedding(params[f"{PREFIX}.tok_emb"], ids) + nx.take(params[f"{PREFIX}.pos_emb"], slice(0, length))
    x = nx.dropout(x, rate, rng)
    self_mask = causal_mask(length)[None, :, :] & mask[:, None, :]
    memories = {
        "self": (None, self_mask),
        "utt": (utt, np.asarray(utt_mask)[..., None, :]),
        "obj": (obj, np.asarray(obj_mask)[..., None, :]),
    }
    for i in range(config.num_layers):
        p = f"{PREFIX}.layers.{i}"
        for name in SUBLAYERS:
            memory, visible = memories[name]
            h = multi_head_attention(x, x if memory is None else memory, visible, params, f"{p}.{name}", config.num_heads)
            x = highway(x, nx.dropout(h, rate, rng), params, f"{p}.{name}")
            if state is not None and name != "obj":
                (state.self_out if name == "self" else state.utt_out).append(x)
    if state is not None:
        state.final = x
    return linear(x, params, f"{PREFIX}.logits")


def _as_batch(enc: EncoderOutput) -> tuple[Tensor, np.ndarray]:
    # a single encoding broadcasts against any number of candidates
    emb = enc.embeddings
    mask = np.asarray(enc.attention_mask, dtype=bool)
    if emb.ndim == 2:
        emb = emb.reshape(1, *emb.shape)
        mask = mask[None, :]
    return emb, mask


def decode(
    utterance_enc: EncoderOutput,
    object_enc: EncoderOutput,
    candidate: TokenSequence | Sequence[int],
    weights,
    return_state: bool = False,
):
    """Logits ``[c, V]`` for one candidate input sequence that starts with [BOS]."""
    ids = list(candidate.ids if isinstance(candidate, TokenSequence) else candidate)
    if not ids:
        raise ContractError("empty candidate")
    arr = np.asarray([ids], dtype=np.int64)
    utt, utt_mask = _as_batch(utterance_enc)
    obj, obj_mask = _as_batch(object_enc)
    state = DecoderState([], [], None) if return_state else None
    logits = decode_batch(
        utt, utt_mask, obj, obj_mask, arr, np.ones_like(arr, dtype=bool), weights.params, weights.decoder, state=state
    )
    logits = logits.reshape(logits.shape[1:])
    return (logits, state) if return_state else logits
