"""Multi-step attention network (MAN) and the two-layer FCNN baseline head.

Two views of the same computation are provided:

* per-sequence functions (``build_memories``, ``init_state``,
  ``reasoning_step``, ``final_logit``, ``fcnn_logit``, ``man_forward``) that
  take ``H`` as a ``(d, l)`` matrix and extract the passage and
  question-option memories explicitly;
* batched heads (:class:`ManClassifier`, :class:`FcnnClassifier`) working on
  ``(N, l, d)`` hidden states, where memory membership is a mask and
  excluded positions receive exactly zero attention weight.

The reasoning loop: ``s0`` is an attention summary of the passage. For
``K >= 2`` steps ``k = 1..K-1`` read ``x_k`` from the question-option memory
with query ``s_{k-1}`` and update ``s_k = GRU(s_{k-1}, x_k)``. ``K = 1``
performs a single read ``x_0`` with query ``s0`` and no update. The logit is
``w3 . [s; x; |s - x|; s * x]`` on the last pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import GRU_FIELDS, GRUParams, Tensor, gru_cell
from .data.packing import Role
from .errors import DegenerateInputError, ShapeError, UsageError


@dataclass
class ManParameters:
    w1: Tensor
    w2: Tensor
    w3: Tensor
    gru: GRUParams
    steps: int = 2

    def __post_init__(self):
        d = self.w1.shape[0]
        if self.steps < 0:
            raise UsageError("reasoning steps K must be >= 0")
        if self.w2.shape != (2 * d,) or self.w3.shape != (4 * d,) or self.gru.dim != d:
            raise ShapeError("MAN parameter dimensions are inconsistent")

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, dim: int, steps: int, rng: np.random.Generator, std: float = 0.02) -> "ManParameters":
        w1 = ad.parameter(rng.normal(0.0, std, size=dim))
        w2 = ad.parameter(rng.normal(0.0, std, size=2 * dim))
        w3 = ad.parameter(rng.normal(0.0, std, size=4 * dim))
        return cls(w1, w2, w3, GRUParams.init(dim, rng, std), steps)

    def named(self) -> Dict[str, Tensor]:
        out = {"w1": self.w1, "w2": self.w2, "w3": self.w3}
        out.update({f"gru.{n}": getattr(self.gru, n) for n in GRU_FIELDS})
        return out


@dataclass
class FcnnParameters:
    hidden_weight: Tensor
    hidden_bias: Tensor
    out_weight: Tensor
    out_bias: Tensor

    def __post_init__(self):
        d = self.hidden_bias.shape[0]
        if self.hidden_weight.shape != (d, d) or self.out_weight.shape != (d,) or self.out_bias.size != 1:
            raise ShapeError("FCNN parameter dimensions are inconsistent")

    @property
    def dim(self) -> int:
        return self.hidden_bias.shape[0]

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, std: float = 0.02) -> "FcnnParameters":
        return cls(ad.parameter(rng.normal(0.0, std, size=(dim, dim))), ad.parameter(np.zeros(dim)),
                   ad.parameter(rng.normal(0.0, std, size=dim)), ad.parameter(np.zeros(())))

    def named(self) -> Dict[str, Tensor]:
        return {"hidden_weight": self.hidden_weight, "hidden_bias": self.hidden_bias,
                "out_weight": self.out_weight, "out_bias": self.out_bias}


@dataclass
class Memories:
    H_P: Tensor
    H_QO: Tensor


@dataclass
class ReasoningTrace:
    alpha: np.ndarray
    betas: List[np.ndarray] = field(default_factory=list)
    xs: List[np.ndarray] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)


# ---------------------------------------------------------------- per-sequence

def build_memories(H: Tensor, roles) -> Memories:
    """Split the columns of ``H`` (d x l) into passage and question-option memories."""
    roles = np.asarray(roles)
    if roles.shape != (H.shape[1],):
        raise ShapeError(f"{roles.shape[0]} role labels for {H.shape[1]} columns")
    p_idx = np.flatnonzero(roles == Role.PASSAGE)
    q_idx = np.flatnonzero(roles == Role.QO)
    if p_idx.size == 0 or q_idx.size == 0:
        raise DegenerateInputError(f"empty working memory (p={p_idx.size}, q={q_idx.size})")
    return Memories(ad.getitem(H, (slice(None), p_idx)), ad.getitem(H, (slice(None), q_idx)))


def init_state(H_P: Tensor, w1: Tensor) -> Tuple[Tensor, Tensor]:
    """Self-attention summary of the passage memory; returns ``(s0, alpha)``."""
    alpha = ad.softmax(ad.matmul(w1, H_P))
    return ad.matmul(H_P, alpha), alpha


def attend(s_prev: Tensor, H_QO: Tensor, w2: Tensor) -> Tuple[Tensor, Tensor]:
    """``beta_i`` = softmax_i of ``w2 . [s_prev; H_QO_i]``; returns ``(x, beta)``."""
    d, q = H_QO.shape
    tiled = ad.matmul(ad.reshape(s_prev, (d, 1)), ad.Tensor(np.ones((1, q))))
    pairs = ad.concat([tiled, H_QO], axis=0)  # 2d x q, column i = [s; H_i]
    beta = ad.softmax(ad.matmul(w2, pairs))
    return ad.matmul(H_QO, beta), beta


def reasoning_step(s_prev: Tensor, H_QO: Tensor, params: ManParameters) -> Tuple[Tensor, Tensor, Tensor]:
    """One refinement step; returns ``(s_k, x_k, beta_k)``."""
    x, beta = attend(s_prev, H_QO, params.w2)
    return gru_cell(s_prev, x, params.gru), x, beta


def final_logit(s: Tensor, x: Tensor, w3: Tensor) -> Tensor:
    feat = ad.concat([s, x, ad.abs_(ad.sub(s, x)), ad.mul(s, x)], axis=0)
    return ad.matmul(w3, feat)


def _rowdot(A: Tensor, w: Tensor) -> Tensor:
    """``A @ w`` for row-stacked ``A``, reduced per row.

    BLAS matrix-vector kernels accumulate rows in blocks, so a row's
    rounding can depend on its batch position; an elementwise product
    followed by a last-axis sum treats every row identically, which keeps
    option scores exactly permutation-equivariant.
    """
    return ad.sum_(ad.mul(A, w), axis=-1)


def _fcnn_rows(first: Tensor, params: FcnnParameters) -> Tensor:
    # shared by the per-sequence and batched paths so K = 0 agrees bit for bit
    hidden = ad.tanh(ad.add(ad.matmul(first, ad.transpose(params.hidden_weight)), params.hidden_bias))
    return ad.add(_rowdot(hidden, params.out_weight), params.out_bias)


def fcnn_logit(pooled_state: Tensor, params: FcnnParameters) -> Tensor:
    """``out_bias + out_weight . tanh(hidden_weight @ pooled + hidden_bias)``."""
    row = ad.reshape(ad.as_tensor(pooled_state), (1, params.dim))
    return ad.reshape(_fcnn_rows(row, params), ())


def man_forward(H: Tensor, roles, params: Union[ManParameters, FcnnParameters]
                ) -> Tuple[Tensor, Optional[ReasoningTrace]]:
    """Scalar logit for one packed sequence, plus the reasoning trace (None for FCNN)."""
    if isinstance(params, FcnnParameters):
        return fcnn_logit(ad.column(H, 0), params), None
    if params.steps == 0:
        raise UsageError("K = 0 denotes the FCNN head; pass FcnnParameters")
    mem = build_memories(H, roles)
    s, alpha = init_state(mem.H_P, params.w1)
    trace = ReasoningTrace(alpha=alpha.data)
    if params.steps == 1:
        x, beta = attend(s, mem.H_QO, params.w2)
        trace.betas.append(beta.data)
        trace.xs.append(x.data)
        trace.states.append(s.data)
    for _ in range(params.steps - 1):
        s, x, beta = reasoning_step(s, mem.H_QO, params)
        trace.betas.append(beta.data)
        trace.xs.append(x.data)
        trace.states.append(s.data)
    return final_logit(s, x, params.w3), trace


# ---------------------------------------------------------------- batched heads

def _masked_read(H: Tensor, scores: Tensor, mask: np.ndarray) -> Tuple[Tensor, Tensor]:
    N, L, d = H.shape
    weights = ad.softmax(scores, axis=-1, mask=mask)
    read = ad.reshape(ad.matmul(ad.reshape(weights, (N, 1, L)), H), (N, d))
    return read, weights


class ManClassifier:
    kind = "man"

    def __init__(self, params: ManParameters, dropout: float = 0.1):
        self.params = params
        self.dropout = dropout

    @property
    def steps(self) -> int:
        return self.params.steps

    def named(self) -> Dict[str, Tensor]:
        return self.params.named()

    def logits(self, H: Tensor, roles: np.ndarray, train: bool = False,
               rng: Optional[np.random.Generator] = None, trace: Optional[list] = None) -> Tensor:
        """One logit per sequence for hidden states ``(N, l, d)``."""
        p = self.params
        N, L, d = H.shape
        pm, qm = roles == Role.PASSAGE, roles == Role.QO
        if not pm.any(axis=1).all() or not qm.any(axis=1).all():
            raise DegenerateInputError("a sequence has an empty passage or question-option memory")
        H = ad.dropout(H, self.dropout, train, rng)
        s, alpha = _masked_read(H, ad.matmul(H, p.w1), pm)
        w2_state, w2_mem = ad.getitem(p.w2, slice(0, d)), ad.getitem(p.w2, slice(d, 2 * d))
        mem_scores = ad.matmul(H, w2_mem)

        def read_qo(state):
            scores = ad.add(mem_scores, ad.reshape(_rowdot(state, w2_state), (N, 1)))
            return _masked_read(H, scores, qm)

        if trace is not None:
            trace.append(("alpha", alpha.data))
        if p.steps == 1:
            x, beta = read_qo(s)
            if trace is not None:
                trace.append(("beta", beta.data))
        for _ in range(p.steps - 1):
            x, beta = read_qo(s)
            s = gru_cell(s, x, p.gru)
            if trace is not None:
                trace.append(("beta", beta.data))
        feat = ad.concat([s, x, ad.abs_(ad.sub(s, x)), ad.mul(s, x)], axis=-1)
        return _rowdot(feat, p.w3)


class FcnnClassifier:
    kind = "fcnn"
    steps = 0

    def __init__(self, params: FcnnParameters, dropout: float = 0.1):
        self.params = params
        self.dropout = dropout

    def named(self) -> Dict[str, Tensor]:
        return self.params.named()

    def logits(self, H: Tensor, roles: np.ndarray, train: bool = False,
               rng: Optional[np.random.Generator] = None, trace: Optional[list] = None) -> Tensor:
        first = ad.dropout(ad.getitem(H, (slice(None), 0)), self.dropout, train, rng)
        return _fcnn_rows(first, self.params)


class PairHead:
    """Three-way classifier on the first-token state (tanh hidden layer, linear output)."""

    kind = "pair"

    def __init__(self, dim: int, rng: np.random.Generator, n_classes: int = 3, dropout: float = 0.1,
                 std: float = 0.02, params: Optional[Dict[str, Tensor]] = None):
        self.dropout = dropout
        self.params = params or {
            "hidden_weight": ad.parameter(rng.normal(0.0, std, size=(dim, dim))),
            "hidden_bias": ad.parameter(np.zeros(dim)),
            "out_weight": ad.parameter(rng.normal(0.0, std, size=(dim, n_classes))),
            "out_bias": ad.parameter(np.zeros(n_classes)),
        }

    def named(self) -> Dict[str, Tensor]:
        return self.params

    def logits(self, H: Tensor, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        p = self.params
        first = ad.dropout(ad.getitem(H, (slice(None), 0)), self.dropout, train, rng)
        hidden = ad.tanh(ad.add(ad.matmul(first, ad.transpose(p["hidden_weight"])), p["hidden_bias"]))
        return ad.add(ad.matmul(hidden, p["out_weight"]), p["out_bias"])


def build_classifier(kind: str, dim: int, steps: int, rng: np.random.Generator, dropout: float = 0.1,
                     std: float = 0.02):
    """``kind`` "man" with ``steps == 0`` yields the FCNN head, matching ``kind`` "fcnn"."""
    if kind == "fcnn" or (kind == "man" and steps == 0):
        return FcnnClassifier(FcnnParameters.init(dim, rng, std), dropout)
    if kind == "man":
        return ManClassifier(ManParameters.init(dim, steps, rng, std), dropout)
    raise UsageError(f"unknown classifier kind {kind!r}")
