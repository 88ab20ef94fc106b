import numpy as np
import pytest

from retriever.data import generate_synthetic_corpus
from retriever.decoder import DecoderConfig
from retriever.encoder import EncoderConfig
from retriever.model import ModelWeights
from retriever.tokenizer import build_vocab, serialize_object

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def tiny_weights(
    vocab_size=20, dim=8, heads=2, enc_layers=1, dec_layers=1, seed=0, scale=None, dropout=0.0, max_positions=48
):
    """A small model; ``scale`` redraws every weight as N(0, scale) (gains around 1)."""
    enc = EncoderConfig(vocab_size, enc_layers, dim, heads, 2 * dim, max_positions, dropout)
    dec = DecoderConfig(vocab_size, dec_layers, dim, heads, max_positions, dropout)
    rng = np.random.default_rng(seed)
    w = ModelWeights.initialize(enc, dec, rng)
    if scale is not None:
        for p in w:
            noise = scale * rng.standard_normal(p.shape)
            p.data = (noise + 1.0 if p.name.endswith(".gain") else noise).astype(np.float32)
    return w


@pytest.fixture
def make_weights():
    return tiny_weights


def corpus_texts(catalog, turns):
    texts = [t.user_utterance for t in turns] + [t.true_response for t in turns]
    return texts + [serialize_object(o) for o in catalog.values()]


@pytest.fixture(scope="session")
def small_corpus():
    catalog, turns = generate_synthetic_corpus(12, 40, seed=7)
    vocab = build_vocab(corpus_texts(catalog, turns), 1000)
    return catalog, turns, vocab
