"""Weight container and the batched teacher-forced forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import decoder as dec
from . import encoder as enc
from . import numerics as nx
from .decoder import DecoderConfig
from .encoder import EncoderConfig, pad_batch, wrap
from .numerics import Tensor
from .tokenizer import BOS_ID, EOS_ID, PAD_ID


@dataclass
class ModelWeights:
    encoder: EncoderConfig
    decoder: DecoderConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def initialize(cls, encoder: EncoderConfig, decoder: DecoderConfig, rng: np.random.Generator) -> "ModelWeights":
        if encoder.vocab_size != decoder.vocab_size:
            raise ValueError("encoder and decoder must share a vocabulary")
        if decoder.kv_dim != encoder.model_dim:
            raise ValueError(f"decoder memory width {decoder.kv_dim} != encoder width {encoder.model_dim}")
        arrays = enc.init_params(encoder, rng)
        arrays.update(dec.init_params(decoder, rng))
        return cls.from_arrays(encoder, decoder, arrays)

    @classmethod
    def from_arrays(cls, encoder, decoder, arrays: dict[str, np.ndarray], dtype=np.float32) -> "ModelWeights":
        params = {k: Tensor(np.array(v, dtype=dtype), requires_grad=True, name=k) for k, v in arrays.items()}
        return cls(encoder, decoder, params)

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        rng = np.random.default_rng(0)
        shapes = {k: v.shape for k, v in enc.init_params(self.encoder, rng).items()}
        shapes.update({k: v.shape for k, v in dec.init_params(self.decoder, rng).items()})
        return shapes

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights.from_arrays(self.encoder, self.decoder, self.arrays(), dtype=dtype)

    def copy(self) -> "ModelWeights":
        return self.astype(np.float32)

    def encoder_names(self) -> list[str]:
        return [k for k in self.params if k.startswith(enc.PREFIX + ".")]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.params.values())


@dataclass
class Batch:
    """Padded teacher-forcing batch. ``targets`` holds [PAD] where no loss applies."""

    utt_ids: np.ndarray
    utt_mask: np.ndarray
    obj_ids: np.ndarray
    obj_mask: np.ndarray
    dec_ids: np.ndarray
    dec_mask: np.ndarray
    targets: np.ndarray
    keys: tuple = ()

    def __len__(self) -> int:
        return self.utt_ids.shape[0]


def collate(
    utterances: Sequence[Sequence[int]],
    objects: Sequence[Sequence[int]],
    responses: Sequence[Sequence[int]],
    keys: Sequence = (),
) -> Batch:
    """Assemble a batch from unwrapped token-id lists."""
    utt_ids, utt_mask = pad_batch([wrap(u) for u in utterances])
    obj_ids, obj_mask = pad_batch([wrap(o) for o in objects])
    dec_ids, dec_mask = pad_batch([[BOS_ID, *r] for r in responses])
    targets, _ = pad_batch([[*r, EOS_ID] for r in responses])
    return Batch(utt_ids, utt_mask, obj_ids, obj_mask, dec_ids, dec_mask, targets, tuple(keys))


def forward_logits(batch: Batch, weights: ModelWeights, rng: np.random.Generator | None = None) -> Tensor:
    utt = enc.encode_batch(batch.utt_ids, batch.utt_mask, weights.params, weights.encoder, rng)
    obj = enc.encode_batch(batch.obj_ids, batch.obj_mask, weights.params, weights.encoder, rng)
    return dec.decode_batch(
        utt, batch.utt_mask, obj, batch.obj_mask, batch.dec_ids, batch.dec_mask, weights.params, weights.decoder, rng
    )


def batch_loss(batch: Batch, weights: ModelWeights, rng: np.random.Generator | None = None) -> Tensor:
    """Mean per-token cross-entropy of the true responses (plus [EOS]) under teacher forcing."""
    return nx.cross_entropy(forward_logits(batch, weights, rng), batch.targets, ignore_index=PAD_ID)
