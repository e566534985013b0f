"""Pack passage / question / option tokens into one encoder input with role labels."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import List, Sequence

import numpy as np

from ..errors import UsageError
from .text import CLS, PAD, SEP, Vocabulary


class Role(IntEnum):
    PAD = 0
    SPECIAL = 1
    PASSAGE = 2
    QO = 3


@dataclass
class EncodedSequence:
    token_ids: np.ndarray
    roles: np.ndarray

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.roles = np.asarray(self.roles, dtype=np.int8)
        if self.token_ids.shape != self.roles.shape:
            raise UsageError("token_ids and roles differ in length")

    def __len__(self):
        return len(self.token_ids)

    @property
    def attention_mask(self) -> np.ndarray:
        return (self.roles != Role.PAD).astype(np.int8)

    @property
    def length(self) -> int:
        """Number of non-pad positions."""
        return int(np.count_nonzero(self.roles != Role.PAD))

    def trimmed(self) -> "EncodedSequence":
        n = self.length
        return EncodedSequence(self.token_ids[:n], self.roles[:n])


def _layout(segments: Sequence[tuple], max_len: int) -> EncodedSequence:
    ids: List[int] = []
    roles: List[int] = []
    for seg_ids, role in segments:
        ids.extend(int(i) for i in seg_ids)
        roles.extend([role] * len(seg_ids))
    pad = max_len - len(ids)
    ids.extend([PAD] * pad)
    roles.extend([Role.PAD] * pad)
    return EncodedSequence(np.array(ids), np.array(roles))


def pack_sequence(passage_tokens: Sequence[str], question_tokens: Sequence[str],
                  option_tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> EncodedSequence:
    """``[CLS] passage [SEP] question option [SEP]`` padded to ``max_len``.

    When too long the passage tail is cut first (keeping one token), then
    the option tail, then the question tail. A question plus option that
    cannot fit beside the three special tokens is rejected.
    """
    if not passage_tokens or not question_tokens or not option_tokens:
        raise UsageError("pack_sequence needs non-empty passage, question and option")
    budget = max_len - 3
    q, o, p = list(question_tokens), list(option_tokens), list(passage_tokens)
    if len(q) + len(o) > budget:
        raise UsageError(
            f"question+option length {len(q) + len(o)} exceeds budget {budget}; "
            "only passages are windowed")
    over = len(p) + len(q) + len(o) - budget
    if over > 0:
        cut = min(over, len(p) - 1)
        p = p[:len(p) - cut]
        over -= cut
    if over > 0:
        cut = min(over, len(o) - 1)
        o = o[:len(o) - cut]
        over -= cut
    if over > 0:
        q = q[:len(q) - over]
    return _layout([
        ([CLS], Role.SPECIAL),
        (vocab.encode(p), Role.PASSAGE),
        ([SEP], Role.SPECIAL),
        (vocab.encode(q + o), Role.QO),
        ([SEP], Role.SPECIAL),
    ], max_len)


def pack_pair(premise_tokens: Sequence[str], hypothesis_tokens: Sequence[str],
              vocab: Vocabulary, max_len: int) -> EncodedSequence:
    """``[CLS] premise [SEP] hypothesis [SEP]``; the premise is truncated first."""
    if not premise_tokens or not hypothesis_tokens:
        raise UsageError("pack_pair needs non-empty premise and hypothesis")
    budget = max_len - 3
    h = list(hypothesis_tokens)[:max(budget - 1, 1)]
    p = list(premise_tokens)[:max(budget - len(h), 1)]
    return _layout([
        ([CLS], Role.SPECIAL),
        (vocab.encode(p), Role.PASSAGE),
        ([SEP], Role.SPECIAL),
        (vocab.encode(h), Role.QO),
        ([SEP], Role.SPECIAL),
    ], max_len)
