"""Seeded finite-difference checks over primitives, random compositions, the encoder and the classifier.

Each case builds a scalar from random inputs and compares backprop with
central differences. Two groups of coordinates have a gradient that is
identically zero, and a relative error there would only compare rounding
noise, so they are masked out: key biases (a bias added to every key
shifts all scores of a query equally) and the half of ``w2`` that
multiplies the state (``w2 . [s; h_i]`` adds the same ``w2_s . s`` to every
column before the softmax). :func:`zero_gradient_coordinates` checks that
those coordinates really do vanish.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GRUParams, Tensor, grad_check, gru_cell, numeric_grad
from .data.examples import MCQAExample
from .data.text import build_vocab
from .encoder import EncoderConfig, TransformerEncoder, pooled
from .man import FcnnParameters, ManParameters, man_forward
from .model import MMMModel, loss, score_options

TOLERANCE = 1e-4
# Whole-model losses sum thousands of float64 terms, so a 1e-5 step leaves
# ~1e-11 of rounding noise in each difference; 1e-4 keeps that noise well
# below the smallest gradients while the O(eps^2) truncation stays ~1e-8.
MODEL_EPS = 1e-4


@dataclass
class GradCase:
    name: str
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def _away_from_zero(rng, shape, low=0.2):
    x = rng.uniform(low, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _readout(out: Tensor, rng) -> Tensor:
    # random linear functional keeps every output coordinate in play
    return ad.sum_(ad.mul(out, rng.normal(size=out.shape)))


def _unary(op, positive=False):
    def build(rng):
        x = ad.parameter(rng.uniform(0.3, 2.0, size=(3, 4)) if positive else _away_from_zero(rng, (3, 4)))
        return [x], lambda r: _readout(op(x), r)
    return build


def _binary(op, positive_b=False):
    def build(rng):
        a = ad.parameter(_away_from_zero(rng, (3, 4)))
        b = ad.parameter(rng.uniform(0.5, 2.0, size=(3, 4)) if positive_b else _away_from_zero(rng, (3, 4)))
        return [a, b], lambda r: _readout(op(a, b), r)
    return build


def _matmul(rng):
    a, b = ad.parameter(rng.normal(size=(3, 4))), ad.parameter(rng.normal(size=(4, 2)))
    return [a, b], lambda r: _readout(ad.matmul(a, b), r)


def _concat(rng):
    a, b = ad.parameter(rng.normal(size=(2, 3))), ad.parameter(rng.normal(size=(2, 2)))
    return [a, b], lambda r: _readout(ad.concat([a, b], axis=1), r)


def _column(rng):
    a = ad.parameter(rng.normal(size=(4, 5)))
    return [a], lambda r: _readout(ad.column(a, 2), r)


def _sum(rng):
    a = ad.parameter(rng.normal(size=(3, 4)))
    return [a], lambda r: _readout(ad.sum_(a, axis=0), r)


def _softmax(rng):
    a = ad.parameter(rng.normal(size=(5,)))
    return [a], lambda r: _readout(ad.softmax(a), r)


def _masked_softmax(rng):
    a = ad.parameter(rng.normal(size=(2, 5)))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
    return [a], lambda r: _readout(ad.softmax(a, axis=-1, mask=mask), r)


def _log_softmax(rng):
    a = ad.parameter(rng.normal(size=(2, 4)))
    return [a], lambda r: _readout(ad.log_softmax(a, axis=-1), r)


def _layer_norm(rng):
    a = ad.parameter(rng.normal(size=(3, 6)))
    g, b = ad.parameter(rng.normal(size=6)), ad.parameter(rng.normal(size=6))
    return [a, g, b], lambda r: _readout(ad.layer_norm(a, g, b), r)


def _embedding(rng):
    table = ad.parameter(rng.normal(size=(6, 3)))
    ids = np.array([[1, 4, 4], [0, 5, 2]])
    return [table], lambda r: _readout(ad.embedding(table, ids), r)


def _reshape_transpose(rng):
    a = ad.parameter(rng.normal(size=(2, 3, 4)))
    return [a], lambda r: _readout(ad.transpose(ad.reshape(a, (6, 4))), r)


def _gru(rng):
    d = 3
    p = GRUParams.init(d, rng, std=0.7)
    s, x = ad.parameter(rng.normal(size=d)), ad.parameter(rng.normal(size=d))
    return [s, x, *p], lambda r: _readout(gru_cell(s, x, p), r)


PRIMITIVES: Dict[str, Callable] = {
    "matmul": _matmul,
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "div": _binary(ad.div, positive_b=True),
    "concat": _concat,
    "tanh": _unary(ad.tanh),
    "sigmoid": _unary(ad.sigmoid),
    "abs": _unary(ad.abs_),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, positive=True),
    "gelu": _unary(ad.gelu),
    "column": _column,
    "sum": _sum,
    "softmax": _softmax,
    "masked_softmax": _masked_softmax,
    "log_softmax": _log_softmax,
    "layer_norm": _layer_norm,
    "embedding": _embedding,
    "reshape_transpose": _reshape_transpose,
    "gru_cell": _gru,
}

_CHAIN_OPS = ("tanh", "sigmoid", "matmul", "mul", "add", "softmax", "abs", "concat_slice")


def _composition(seed: int):
    """A random chain over a 4x4 state mixing elementwise and matrix ops."""
    def build(rng):
        x = ad.parameter(rng.normal(size=(4, 4)))
        w = ad.parameter(rng.normal(size=(4, 4)) * 0.8)
        c = ad.parameter(_away_from_zero(rng, (4, 4)))
        ops = [str(o) for o in np.random.default_rng([seed, 1]).choice(_CHAIN_OPS, size=6)]

        def fn(r):
            h = x
            for op in ops:
                if op == "tanh":
                    h = ad.tanh(h)
                elif op == "sigmoid":
                    h = ad.sigmoid(h)
                elif op == "matmul":
                    h = ad.matmul(h, w)
                elif op == "mul":
                    h = ad.mul(h, c)
                elif op == "add":
                    h = ad.add(h, c)
                elif op == "softmax":
                    h = ad.softmax(h, axis=-1)
                elif op == "abs":
                    h = ad.abs_(ad.add(h, c))
                else:
                    h = ad.concat([ad.getitem(h, (slice(None), slice(0, 2))), ad.getitem(h, (slice(None), slice(2, 4)))],
                                  axis=1)
            return _readout(h, r)
        return [x, w, c], fn
    return build


def _run(name: str, build, seed: int) -> GradCase:
    rng = np.random.default_rng([seed, 17])
    params, fn = build(rng)
    weights_seed = [seed, 29]
    return GradCase(name, grad_check(lambda: fn(np.random.default_rng(weights_seed)), params))


# ---------------------------------------------------------------- model-level cases

def _toy_examples():
    return [
        MCQAExample("g0", ["m: the cat sat .", "w: a dog ran ."], "what does the man say ?",
                    ["cat sat", "dog ran", "bird flew"], 0),
        MCQAExample("g1", ["the dog ran far ."], "what ran ?", ["dog", "cat"], 0),
    ]


def _toy_model(steps: int, seed: int, d: int = 16, kind: str = "man") -> MMMModel:
    vocab = build_vocab([t for ex in _toy_examples() for t in [*ex.passage, ex.question, *ex.options]] +
                        ["woman man"], 1)
    return MMMModel.create(vocab, hidden=d, layers=2, heads=2, max_len=16, dropout=0.0, seed=seed,
                           classifier=kind, steps=steps, init_std=0.3)


def _state_half_mask(w2: Tensor) -> np.ndarray:
    d = w2.shape[0] // 2
    return np.arange(2 * d) >= d


def checked(named: Dict[str, Tensor]):
    """Parameters and masks for :func:`grad_check`, skipping identically-zero coordinates."""
    params, masks = [], []
    for name, p in named.items():
        if name.endswith(".bk"):
            continue
        params.append(p)
        masks.append(_state_half_mask(p) if name.split(".")[-1] == "w2" else None)
    return params, masks


def _zero_coordinates(named: Dict[str, Tensor]):
    out = []
    for name, p in named.items():
        if name.endswith(".bk"):
            out.append((p, np.ones(p.shape, dtype=bool)))
        elif name.split(".")[-1] == "w2":
            out.append((p, ~_state_half_mask(p)))
    return out


def _shrink_ffn_init(model: MMMModel, rng) -> None:
    # larger random weights than the training init so every path carries signal
    for name, p in model.named_parameters().items():
        if p.ndim and not name.endswith(("_g", "_b", ".bk")):
            p.data = rng.normal(0.0, 0.3, size=p.shape)


def encoder_case(seed: int) -> GradCase:
    """Cross entropy on a linear readout of the pooled state of a d=16, 2-layer encoder."""
    cfg = EncoderConfig(vocab_size=10, hidden=16, layers=2, heads=2, max_len=8, dropout=0.0, seed=seed,
                        init_std=0.3)
    enc = TransformerEncoder(cfg)
    rng = np.random.default_rng([seed, 5])
    ids = np.array([[2, 5, 6, 3, 7, 8, 3, 0], [2, 9, 4, 3, 5, 3, 0, 0]])
    mask = ids != 0
    readout = ad.parameter(rng.normal(size=(16, 3)))
    labels = np.array([0, 2])

    def fn():
        H = enc.forward(ids, mask)
        cls = ad.getitem(H, (slice(None), 0))
        logp = ad.log_softmax(ad.matmul(cls, readout), axis=-1)
        return ad.neg(ad.mean(ad.getitem(logp, (np.arange(2), labels))))

    params, masks = checked(dict(enc.params, readout=readout))
    return GradCase(f"encoder_d16[seed={seed}]", grad_check(fn, params, eps=MODEL_EPS, masks=masks))


def pooled_encode_case(seed: int) -> GradCase:
    """Same check through the single-sequence ``encode`` and ``pooled`` path."""
    from .data.packing import EncodedSequence
    cfg = EncoderConfig(vocab_size=9, hidden=16, layers=2, heads=4, max_len=6, dropout=0.0, seed=seed,
                        init_std=0.3)
    enc = TransformerEncoder(cfg)
    seq = EncodedSequence(np.array([2, 4, 3, 6, 3, 0]), np.array([1, 2, 1, 3, 1, 0]))
    w = np.random.default_rng([seed, 6]).normal(size=16)

    def fn():
        return ad.sum_(ad.mul(ad.tanh(pooled(enc.encode(seq))), w))

    params, masks = checked(enc.params)
    return GradCase(f"encode_pooled_d16[seed={seed}]", grad_check(fn, params, eps=MODEL_EPS, masks=masks))


def man_case(steps: int, seed: int) -> GradCase:
    """``man_forward`` with respect to H, w1, w2, w3 and the GRU parameters."""
    rng = np.random.default_rng([seed, steps, 3])
    d, l = 4, 9
    H = ad.parameter(rng.normal(size=(d, l)))
    roles = np.array([1, 2, 2, 2, 1, 3, 3, 1, 0])
    params = ManParameters.init(d, steps, rng, std=0.6)

    def fn():
        logit, _ = man_forward(H, roles, params)
        return ad.tanh(logit)

    ps, masks = checked(dict(params.named(), H=H))
    return GradCase(f"man_K{steps}[seed={seed}]", grad_check(fn, ps, eps=MODEL_EPS, masks=masks))


def fcnn_case(seed: int) -> GradCase:
    rng = np.random.default_rng([seed, 4])
    H = ad.parameter(rng.normal(size=(4, 6)))
    params = FcnnParameters.init(4, rng, std=0.6)
    roles = np.array([1, 2, 1, 3, 1, 0])
    return GradCase(f"fcnn[seed={seed}]", grad_check(lambda: man_forward(H, roles, params)[0],
                                                     [H, *params.named().values()]))


def score_options_case(seed: int, steps: int = 2) -> GradCase:
    """loss of ``score_options`` on a d=16 model, all parameters but key biases."""
    model = _toy_model(steps, seed)
    _shrink_ffn_init(model, np.random.default_rng([seed, 8]))
    ex = _toy_examples()[seed % 2]

    def fn():
        return loss(score_options(ex, model, normalize_speakers=True), ex.label)

    params, masks = checked(model.named_parameters())
    return GradCase(f"loss_score_options_K{steps}[seed={seed}]", grad_check(fn, params, eps=MODEL_EPS, masks=masks))


def zero_gradient_coordinates(seed: int = 0) -> float:
    """Largest |gradient|, analytic or numeric, over the masked-out coordinates; should be ~0."""
    model = _toy_model(2, seed)
    _shrink_ffn_init(model, np.random.default_rng([seed, 8]))
    ex = _toy_examples()[0]

    def fn():
        return loss(score_options(ex, model), ex.label)

    zero = _zero_coordinates(model.named_parameters())
    for p, _ in zero:
        p.grad = None
    fn().backward()
    worst = 0.0
    for p, mask in zero:
        worst = max(worst, float(np.abs(p.grad[mask]).max()), float(np.abs(numeric_grad(fn, p)[mask]).max()))
    return worst


# ---------------------------------------------------------------- suites

def primitive_cases(seeds: Sequence[int] = (0, 1)) -> List[GradCase]:
    return [_run(f"{name}[seed={s}]", build, s) for name, build in PRIMITIVES.items() for s in seeds]


def composition_cases(count: int = 20) -> List[GradCase]:
    return [_run(f"composition[seed={s}]", _composition(s), s) for s in range(count)]


def model_cases(quick: bool = False) -> List[GradCase]:
    cases = [encoder_case(0), man_case(1, 0), man_case(2, 0), man_case(5, 0), fcnn_case(0),
             score_options_case(0)]
    if not quick:
        cases += [encoder_case(1), pooled_encode_case(0), man_case(1, 1), man_case(2, 1), man_case(5, 1),
                  score_options_case(1), score_options_case(2, steps=1)]
    return cases


def full_suite(quick: bool = False) -> List[GradCase]:
    with ad.precision("f64"):
        return primitive_cases((0,) if quick else (0, 1)) + composition_cases(20) + model_cases(quick)
