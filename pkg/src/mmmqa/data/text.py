"""Speaker normalisation, tokenisation and vocabulary construction."""
from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, List, Sequence, Union

import numpy as np

PAD, UNK, CLS, SEP = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")

_SPEAKER = re.compile(r"^(\s*)([wfm]):", re.IGNORECASE)
_SPEAKER_NAMES = {"w": "woman", "f": "woman", "m": "man"}
_TOKEN = re.compile(r"\w+|[^\w\s]")


def speaker_normalize(utterance: str) -> str:
    """Expand a leading one-letter speaker tag: ``w:``/``f:`` -> ``woman:``, ``m:`` -> ``man:``.

    >>> speaker_normalize("m: How would he know?")
    'man: How would he know?'
    """
    m = _SPEAKER.match(utterance)
    if not m:
        return utterance
    name = _SPEAKER_NAMES[m.group(2).lower()]
    return f"{m.group(1)}{name}:{utterance[m.end():]}"


def tokenize(text: str) -> List[str]:
    """Lowercase, split on whitespace, and split punctuation into single tokens."""
    return _TOKEN.findall(text.lower())


class Vocabulary:
    """Bijection between tokens and integer ids.

    Ids 0-3 are reserved for ``[PAD]``, ``[UNK]``, ``[CLS]`` and ``[SEP]``.
    """

    def __init__(self, tokens: Sequence[str], min_freq: int = 1):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        self.min_freq = min_freq

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id_of(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, UNK) for t in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.itos[int(i)] for i in ids]

    def to_list(self) -> List[str]:
        return list(self.itos)


def build_vocab(corpus: Iterable[Union[str, Sequence[str]]], min_freq: int = 1) -> Vocabulary:
    """Vocabulary of tokens seen at least ``min_freq`` times.

    Corpus items are raw strings (tokenised here) or token lists. Ids after
    the reserved block follow descending count, ties broken lexicographically.
    """
    counts: Counter = Counter()
    for item in corpus:
        counts.update(tokenize(item) if isinstance(item, str) else item)
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept, min_freq=min_freq)
