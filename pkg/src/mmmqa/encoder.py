"""Small post-norm transformer encoder used as the sentence encoder."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data.packing import EncodedSequence, Role
from .errors import UsageError


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 512
    dropout: float = 0.1
    seed: int = 0
    ffn_mult: int = 4
    init_std: float = 0.02

    def __post_init__(self):
        if self.hidden % self.heads:
            raise UsageError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if self.max_len < 1 or self.vocab_size < 1 or self.layers < 0:
            raise UsageError("vocab_size, max_len must be >= 1 and layers >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _layer_names(i: int):
    return [f"layer{i}.{n}" for n in ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo", "ln1_g", "ln1_b",
                                       "W1", "b1", "W2", "b2", "ln2_g", "ln2_b")]


class TransformerEncoder:
    """Token + learned position embeddings followed by ``layers`` post-norm blocks.

    Parameters live in :attr:`params` (ordered name -> Tensor); weights are
    stored input-major so a projection is ``x @ W``.
    """

    def __init__(self, config: EncoderConfig, params: Optional[Dict[str, Tensor]] = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> Dict[str, Tensor]:
        c = self.config
        rng = np.random.default_rng([c.seed, 101])
        d, f, std = c.hidden, c.hidden * c.ffn_mult, c.init_std

        def normal(*shape):
            return ad.parameter(rng.normal(0.0, std, size=shape))

        p = {"tok_emb": normal(c.vocab_size, d), "pos_emb": normal(c.max_len, d)}
        for i in range(c.layers):
            names = _layer_names(i)
            shapes = [(d, d), (d,), (d, d), (d,), (d, d), (d,), (d, d), (d,), None, None,
                      (d, f), (f,), (f, d), (d,), None, None]
            for name, shape in zip(names, shapes):
                if name.endswith("_g"):
                    p[name] = ad.parameter(np.ones(d))
                elif shape is None or name.split(".")[1].startswith("b"):
                    p[name] = ad.parameter(np.zeros(shape or d))
                else:
                    p[name] = normal(*shape)
        return p

    def check_input(self, ids: np.ndarray) -> None:
        if ids.shape[-1] > self.config.max_len:
            raise UsageError(f"sequence length {ids.shape[-1]} exceeds max_len {self.config.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise UsageError(f"token id outside [0, {self.config.vocab_size})")

    def forward(self, ids: np.ndarray, mask: np.ndarray, train: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Hidden states of shape ``(N, l, d)`` for ids ``(N, l)``; ``mask`` is True on real tokens."""
        ids = np.asarray(ids)
        self.check_input(ids)
        c, p = self.config, self.params
        N, L = ids.shape
        x = ad.add(ad.embedding(p["tok_emb"], ids), ad.getitem(p["pos_emb"], slice(0, L)))
        x = ad.dropout(x, c.dropout, train, rng)
        key_mask = np.asarray(mask, dtype=bool)[:, None, None, :]
        for i in range(c.layers):
            x = self._block(x, i, key_mask, train, rng)
        return x

    def _block(self, x: Tensor, i: int, key_mask, train, rng) -> Tensor:
        c, p = self.config, self.params
        pre = f"layer{i}."
        N, L, d = x.shape
        h, dh = c.heads, d // c.heads

        def heads(t):
            return ad.transpose(ad.reshape(t, (N, L, h, dh)), (0, 2, 1, 3))

        q = heads(ad.add(ad.matmul(x, p[pre + "Wq"]), p[pre + "bq"]))
        k = heads(ad.add(ad.matmul(x, p[pre + "Wk"]), p[pre + "bk"]))
        v = heads(ad.add(ad.matmul(x, p[pre + "Wv"]), p[pre + "bv"]))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = ad.softmax(scores, axis=-1, mask=np.broadcast_to(key_mask, scores.shape))
        attn = ad.dropout(attn, c.dropout, train, rng)
        ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (N, L, d))
        out = ad.add(ad.matmul(ctx, p[pre + "Wo"]), p[pre + "bo"])
        out = ad.dropout(out, c.dropout, train, rng)
        x = ad.layer_norm(ad.add(x, out), p[pre + "ln1_g"], p[pre + "ln1_b"])
        ff = ad.gelu(ad.add(ad.matmul(x, p[pre + "W1"]), p[pre + "b1"]))
        ff = ad.add(ad.matmul(ff, p[pre + "W2"]), p[pre + "b2"])
        ff = ad.dropout(ff, c.dropout, train, rng)
        return ad.layer_norm(ad.add(x, ff), p[pre + "ln2_g"], p[pre + "ln2_b"])

    def encode(self, seq: EncodedSequence, train: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        """Hidden states ``H`` of one packed sequence, shape ``(d, l)``."""
        ids = seq.token_ids[None, :]
        H = self.forward(ids, (seq.roles != Role.PAD)[None, :], train, rng)
        return ad.transpose(ad.reshape(H, H.shape[1:]))


def pooled(H: Tensor) -> Tensor:
    """First-token state: column 0 of a ``(d, l)`` matrix."""
    if H.shape[-1] < 1:
        raise UsageError("pooled() needs at least one position")
    return ad.column(H, 0)
