"""Building blocks shared by the encoder and the decoder."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from . import numerics as nx
from .numerics import ContractError, Tensor

MASK_BIAS = -1e9
INIT_STD = 0.02

Params = Mapping[str, Tensor]


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(np.float32)


def init_attention(rng, prefix: str, dim: int, kv_dim: int | None = None) -> dict[str, np.ndarray]:
    kv_dim = dim if kv_dim is None else kv_dim
    return {
        f"{prefix}.wq": truncated_normal(rng, (dim, dim)),
        f"{prefix}.wk": truncated_normal(rng, (kv_dim, dim)),
        f"{prefix}.wv": truncated_normal(rng, (kv_dim, dim)),
        f"{prefix}.wo": truncated_normal(rng, (dim, dim)),
    }


def init_layer_norm(prefix: str, dim: int) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.gain": np.ones(dim, dtype=np.float32),
        f"{prefix}.bias": np.zeros(dim, dtype=np.float32),
    }


def init_linear(rng, prefix: str, fan_in: int, fan_out: int) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.w": truncated_normal(rng, (fan_in, fan_out)),
        f"{prefix}.b": np.zeros(fan_out, dtype=np.float32),
    }


def linear(x: Tensor, params: Params, prefix: str) -> Tensor:
    return x @ params[f"{prefix}.w"] + params[f"{prefix}.b"]


def layer_norm(x: Tensor, params: Params, prefix: str) -> Tensor:
    return nx.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def causal_mask(length: int) -> np.ndarray:
    """``mask[i, j]`` is True iff position ``i`` may attend to position ``j`` (``j <= i``)."""
    if length < 1:
        raise ContractError(f"causal_mask needs length >= 1, got {length}")
    return np.tril(np.ones((length, length), dtype=bool))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return nx.transpose(x.reshape(b, n, heads, d // heads), (0, 2, 1, 3))


def multi_head_attention(
    queries_from: Tensor,
    keys_values_from: Tensor,
    mask: np.ndarray,
    params: Params,
    prefix: str,
    num_heads: int,
) -> Tensor:
    """Scaled dot-product attention with ``num_heads`` heads.

    Inputs are ``[a, D]`` / ``[b, Dk]`` or batched ``[B, a, D]`` / ``[B, b, Dk]``.
    ``mask`` broadcasts to ``[B, a, b]``; True marks a visible key.
    """
    single = queries_from.ndim == 2
    if single:
        queries_from = queries_from.reshape(1, *queries_from.shape)
        keys_values_from = keys_values_from.reshape(1, *keys_values_from.shape)
    bsz, a, dim = queries_from.shape
    b = keys_values_from.shape[1]
    if dim % num_heads:
        raise ContractError(f"model width {dim} not divisible by {num_heads} heads")
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), (bsz, a, b))
    if not mask.any(axis=-1).all():
        raise ContractError("attention mask leaves a query row with no visible key")

    q = _split_heads(queries_from @ params[f"{prefix}.wq"], num_heads)
    k = _split_heads(keys_values_from @ params[f"{prefix}.wk"], num_heads)
    v = _split_heads(keys_values_from @ params[f"{prefix}.wv"], num_heads)
    scale = 1.0 / math.sqrt(dim // num_heads)
    scores = (q @ nx.swap_last(k)) * scale
    bias = np.where(mask, 0.0, MASK_BIAS).astype(scores.dtype)[:, None, :, :]
    weights = nx.softmax(scores + bias, axis=-1)
    heads = nx.transpose(weights @ v, (0, 2, 1, 3)).reshape(bsz, a, dim)
    out = heads @ params[f"{prefix}.wo"]
    return out.reshape(a, dim) if single else out
