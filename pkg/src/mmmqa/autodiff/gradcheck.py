"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic, numeric) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    g = out.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = float(fn().data)
            flat[i] = old - eps
            fm = float(fn().data)
            flat[i] = old
            g[i] = (fp - fm) / (2.0 * eps)
    return out


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               masks: Optional[Sequence[Optional[np.ndarray]]] = None) -> float:
    """Largest relative error between backprop and central differences.

    ``fn`` must rebuild its graph on every call and be deterministic
    (dropout off). Parameters are perturbed in place and restored.
    ``masks`` optionally selects, per parameter, the coordinates to compare.
    """
    for p in params:
        p.grad = None
    fn().backward()
    worst = 0.0
    for i, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_grad(fn, p, eps)
        err = relative_error(analytic, numeric)
        if masks is not None and masks[i] is not None:
            err = err[np.asarray(masks[i], dtype=bool)]
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
