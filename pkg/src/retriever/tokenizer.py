"""Wordpiece tokenization and catalog-object serialization."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD, UNK, BOS, EOS = "[PAD]", "[UNK]", "[BOS]", "[EOS]"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)
CONTINUATION = "##"
MAX_WORD_CHARS = 100

_WORD_RE = re.compile(r"\w+|[^\w\s]")


class VocabularyError(ValueError):
    pass


def normalize(text: str) -> list[str]:
    """Lowercase and split into words, keeping each punctuation mark as its own word."""
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    """Dense token inventory. Ids 0-3 are the reserved tokens."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise VocabularyError(f"vocabulary must start with {RESERVED}")
        self._tokens = tokens
        self._ids = {}
        for i, tok in enumerate(tokens):
            if tok in self._ids:
                raise VocabularyError(f"duplicate token {tok!r} at line {i}")
            if not tok or any(c.isspace() for c in tok):
                raise VocabularyError(f"invalid token {tok!r} at line {i}")
            self._ids[tok] = i

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise IndexError(f"token id {idx} outside vocabulary of size {len(self._tokens)}")
        return self._tokens[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self._tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    source_text: str = field(default="", compare=False)

    def __len__(self) -> int:
        return len(self.ids)


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Build a deterministic vocabulary from raw text.

    Every character seen gets both a word-initial and a ``##`` form. The
    remaining slots go to whole words and ``##`` suffixes ordered by count,
    then lexicographically.
    """
    words = Counter()
    for text in corpus:
        words.update(normalize(text))
    if not words:
        raise VocabularyError("corpus has no words")

    chars = sorted({c for w in words for c in w})
    base = list(RESERVED)
    for c in chars:
        base.extend([c, CONTINUATION + c])
    if max_size < len(base):
        raise VocabularyError(
            f"max_size {max_size} cannot hold {len(RESERVED)} reserved tokens and "
            f"{len(base) - len(RESERVED)} character pieces"
        )

    pieces = Counter()
    for word, count in words.items():
        if len(word) > MAX_WORD_CHARS:
            continue
        if len(word) > 1:
            pieces[word] += count
        for start in range(1, len(word) - 1):
            pieces[CONTINUATION + word[start:]] += count
    ranked = sorted(pieces.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = base + [tok for tok, _ in ranked[: max_size - len(base)]]
    return Vocabulary(tokens)


def _wordpiece(word: str, vocab: Vocabulary) -> list[int]:
    if len(word) > MAX_WORD_CHARS:
        return [UNK_ID]
    out = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while end > start:
            cand = word[start:end] if start == 0 else CONTINUATION + word[start:end]
            if cand in vocab:
                piece = cand
                break
            end -= 1
        if piece is None:
            return [UNK_ID]
        out.append(vocab.id_of(piece))
        start = end
    return out


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    ids: list[int] = []
    for word in normalize(text):
        ids.extend(_wordpiece(word, vocab))
    return TokenSequence(tuple(ids), text)


def detokenize(seq: TokenSequence | Sequence[int], vocab: Vocabulary) -> str:
    """Rejoin pieces into space-separated words; reserved markers other than [UNK] are dropped."""
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    words: list[str] = []
    for idx in ids:
        tok = vocab.token_of(idx)
        if tok in (PAD, BOS, EOS):
            continue
        if tok.startswith(CONTINUATION) and words:
            words[-1] += tok[len(CONTINUATION):]
        else:
            words.append(tok)
    return " ".join(words)


def serialize_object(attributes: Mapping[str, Sequence[str]]) -> str:
    """Render ``{name: [v1, v2]}`` as ``"name: v1, v2."``, attributes sorted by name."""
    if hasattr(attributes, "attributes"):
        attributes = attributes.attributes
    parts = [f"{name}: {', '.join(attributes[name])}" for name in sorted(attributes)]
    return ". ".join(parts) + "." if parts else ""
