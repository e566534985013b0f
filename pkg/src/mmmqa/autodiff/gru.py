"""Gated recurrent unit cell built from the autodiff primitives."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, add, as_tensor, matmul, mul, parameter, sigmoid, sub, tanh, transpose

GRU_FIELDS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


class GRUParams(NamedTuple):
    """Gate parameters; ``W_*`` act on the input, ``U_*`` on the previous state."""

    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, std: float = 0.02) -> "GRUParams":
        vals = {}
        for name in GRU_FIELDS:
            if name.startswith("b"):
                vals[name] = parameter(np.zeros(dim))
            else:
                vals[name] = parameter(rng.normal(0.0, std, size=(dim, dim)))
        return cls(**vals)

    @classmethod
    def zeros(cls, dim: int) -> "GRUParams":
        return cls(**{n: parameter(np.zeros(dim if n.startswith("b") else (dim, dim))) for n in GRU_FIELDS})

    @property
    def dim(self) -> int:
        return self.b_z.shape[0]


def _affine(x: Tensor, W: Tensor, s: Tensor, U: Tensor, b: Tensor) -> Tensor:
    # row-vector form of W x + U s + b, valid for any leading batch shape
    return add(add(matmul(x, transpose(W)), matmul(s, transpose(U))), b)


def gru_cell(s_prev, x, params: GRUParams) -> Tensor:
    """One GRU update of ``s_prev`` given input ``x`` (both ``(..., d)``).

    z = sigmoid(W_z x + U_z s + b_z)
    r = sigmoid(W_r x + U_r s + b_r)
    h = tanh(W_h x + U_h (r * s) + b_h)
    out = (1 - z) * s + z * h
    """
    s_prev, x = as_tensor(s_prev), as_tensor(x)
    d = params.dim
    if s_prev.shape[-1] != d or x.shape[-1] != d:
        raise ShapeError(f"gru_cell expects trailing dim {d}, got state {s_prev.shape} and input {x.shape}")
    z = sigmoid(_affine(x, params.W_z, s_prev, params.U_z, params.b_z))
    r = sigmoid(_affine(x, params.W_r, s_prev, params.U_r, params.b_r))
    h = tanh(_affine(x, params.W_h, mul(r, s_prev), params.U_h, params.b_h))
    return add(mul(sub(1.0, z), s_prev), mul(z, h))
