"""Teacher-forced maximum-likelihood training with Adam, plus checkpoints."""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .model import Batch, ModelWeights, batch_loss, collate
from .tokenizer import Vocabulary, serialize_object, tokenize


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    freeze_encoder: bool = False
    grad_clip_norm: float | None = 1.0
    log_every: int = 10

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("steps and batch_size must be >= 1 and learning_rate > 0")


def adam_update(param, grad, m, v, t: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step; returns ``(param, m, v)`` as new arrays. ``t`` counts from 1."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    step = (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)
    return param - step, m.astype(param.dtype, copy=False), v.astype(param.dtype, copy=False)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


class Adam:
    def __init__(self, config: TrainConfig):
        self.config = config
        self.state = AdamState()

    def step(self, params: Mapping[str, nx.Tensor], names: Sequence[str]) -> None:
        c = self.config
        s = self.state
        s.t += 1
        for name in names:
            p = params[name]
            if p.grad is None:
                continue
            m = s.m.get(name, np.zeros_like(p.data))
            v = s.v.get(name, np.zeros_like(p.data))
            p.data, s.m[name], s.v[name] = adam_update(
                p.data, p.grad, m, v, s.t, c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_epsilon
            )


def clip_grad_norm(tensors: Sequence[nx.Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((t.grad.astype(np.float64) ** 2).sum()) for t in tensors if t.grad is not None)))
    if total > max_norm:
        scale = np.float32(max_norm / (total + 1e-6))
        for t in tensors:
            if t.grad is not None:
                t.grad = t.grad * scale
    return total


@dataclass(frozen=True)
class Example:
    key: tuple
    utterance: tuple[int, ...]
    obj: tuple[int, ...]
    response: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.utterance) + len(self.obj) + len(self.response)


def make_examples(turns, catalog, vocab: Vocabulary) -> list[Example]:
    obj_cache: dict[str, tuple[int, ...]] = {}
    out = []
    for t in turns:
        if t.referred_object_id not in obj_cache:
            obj_cache[t.referred_object_id] = tokenize(serialize_object(catalog[t.referred_object_id]), vocab).ids
        out.append(
            Example(
                t.key,
                tokenize(t.user_utterance, vocab).ids,
                obj_cache[t.referred_object_id],
                tokenize(t.true_response, vocab).ids,
            )
        )
    return out


def make_batch(examples: Sequence[Example]) -> Batch:
    return collate(
        [e.utterance for e in examples], [e.obj for e in examples], [e.response for e in examples], [e.key for e in examples]
    )


def batch_schedule(examples: Sequence[Example], batch_size: int, rng: np.random.Generator):
    """Endless stream of batches: shuffle, bucket by length within windows, shuffle batch order."""
    window = batch_size * 8
    while True:
        order = rng.permutation(len(examples))
        batches = []
        for start in range(0, len(order), window):
            chunk = sorted(order[start : start + window], key=lambda i: (examples[i].size, i))
            batches.extend(chunk[j : j + batch_size] for j in range(0, len(chunk), batch_size))
        for b in rng.permutation(len(batches)):
            yield [examples[i] for i in batches[b]]


def train_step(
    batch: Batch,
    weights: ModelWeights,
    optimizer: Adam,
    config: TrainConfig,
    rng: np.random.Generator | None,
    step: int = 0,
) -> float:
    """Forward, cross-entropy, backward, optional clip, Adam update. Returns the pre-update loss."""
    frozen = set(weights.encoder_names()) if config.freeze_encoder else set()
    trainable = [n for n in weights.params if n not in frozen]
    for name, p in weights.params.items():
        p.grad = None
        p.requires_grad = name not in frozen
    try:
        loss = batch_loss(batch, weights, rng)
    except nx.NonFiniteError as e:
        raise TrainingError(f"step {step}: {e}; batch {list(batch.keys)}") from None
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingError(f"step {step}: non-finite loss {value}; batch {list(batch.keys)}")
    loss.backward()
    if config.grad_clip_norm is not None:
        clip_grad_norm([weights.params[n] for n in trainable], config.grad_clip_norm)
    optimizer.step(weights.params, trainable)
    return value


def train(
    examples: Sequence[Example],
    weights: ModelWeights,
    config: TrainConfig,
    batch_rng: np.random.Generator,
    dropout_rng: np.random.Generator | None,
    log: Callable[[dict], None] | None = None,
) -> list[float]:
    """Run ``config.steps`` training steps; returns the loss per step."""
    if not examples:
        raise TrainingError("no training examples")
    optimizer = Adam(config)
    stream = batch_schedule(examples, config.batch_size, batch_rng)
    losses = []
    for step in range(1, config.steps + 1):
        t0 = time.perf_counter()
        batch = make_batch(next(stream))
        losses.append(train_step(batch, weights, optimizer, config, dropout_rng, step))
        if log is not None and (step % config.log_every == 0 or step == 1 or step == config.steps):
            wall_ms = round((time.perf_counter() - t0) * 1000.0, 3)
            log({"step": step, "loss": losses[-1], "lr": config.learning_rate, "wall_ms": wall_ms})
    for p in weights.params.values():
        p.grad = None
        p.requires_grad = True
    return losses


def mean_token_loss(examples: Sequence[Example], weights: ModelWeights, batch_size: int = 64) -> float:
    """Mean per-token cross-entropy over all examples, without dropout."""
    total = 0.0
    count = 0
    with nx.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = make_batch(examples[start : start + batch_size])
            n = int((batch.targets != 0).sum())
            total += batch_loss(batch, weights).item() * n
            count += n
    return total / count


# checkpoints

MAGIC = b"RTVCKPT\x00"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    weights: ModelWeights
    vocab: Vocabulary
    step: int = 0
    seed: int = 0


def save_checkpoint(path, weights: ModelWeights, vocab: Vocabulary, step: int = 0, seed: int = 0) -> None:
    """Magic, version and header length, a JSON header, then raw little-endian float32 tensors."""
    directory = []
    offset = 0
    payloads = []
    for name in sorted(weights.params):
        arr = np.ascontiguousarray(weights.params[name].data, dtype="<f4")
        raw = arr.tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = {
        "encoder": asdict(weights.encoder),
        "decoder": asdict(weights.decoder),
        "vocab": vocab.tokens,
        "step": step,
        "seed": seed,
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(blob)))
        f.write(blob)
        for raw in payloads:
            f.write(raw)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: checkpoint not found") from None
    if len(data) < _PREAMBLE.size:
        raise CheckpointError(f"{path}: corrupt checkpoint (truncated preamble)")
    magic, version, hlen = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: corrupt checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, expected {FORMAT_VERSION}")
    start = _PREAMBLE.size + hlen
    if len(data) < start:
        raise CheckpointError(f"{path}: corrupt checkpoint (truncated header)")
    try:
        header = json.loads(data[_PREAMBLE.size : start].decode("utf-8"))
        enc_cfg = EncoderConfig(**header["encoder"])
        dec_cfg = DecoderConfig(**header["decoder"])
        vocab = Vocabulary(header["vocab"])
        directory = header["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint header ({e})") from None

    shell = ModelWeights(enc_cfg, dec_cfg)
    expected = shell.expected_shapes()
    names = [t["name"] for t in directory]
    if len(set(names)) != len(names):
        raise CheckpointError(f"{path}: duplicate tensor names")
    extra = sorted(set(names) - set(expected))
    missing = sorted(set(expected) - set(names))
    if extra:
        raise CheckpointError(f"{path}: unknown tensors {extra}")
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing}")

    payload = memoryview(data)[start:]
    arrays = {}
    for t in directory:
        shape = tuple(t["shape"])
        if shape != tuple(expected[t["name"]]):
            raise CheckpointError(f"{path}: tensor {t['name']} has shape {shape}, expected {expected[t['name']]}")
        end = t["offset"] + t["nbytes"]
        if t["nbytes"] != 4 * int(np.prod(shape)) or end > len(payload):
            raise CheckpointError(f"{path}: corrupt checkpoint (tensor {t['name']} truncated)")
        arrays[t["name"]] = np.frombuffer(payload[t["offset"] : end], dtype="<f4").reshape(shape)
    if start + sum(t["nbytes"] for t in directory) != len(data):
        raise CheckpointError(f"{path}: corrupt checkpoint (trailing or missing bytes)")
    weights = ModelWeights.from_arrays(enc_cfg, dec_cfg, arrays)
    return Checkpoint(weights, vocab, int(header.get("step", 0)), int(header.get("seed", 0)))
