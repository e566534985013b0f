"""Adam, the warmup/linear-decay learning-rate schedule, and global-norm clipping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import ShapeError, UsageError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class OptimizerState:
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray]) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]],
              state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place.

    A ``None`` gradient is treated as zero. ``state.step`` is incremented once.
    """
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ShapeError("adam_step: parameter, gradient and moment lists differ in length")
    t = state.step + 1
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} vs parameter {p.shape}")
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + EPS)).astype(p.dtype, copy=False)
    state.step = t


@dataclass(frozen=True)
class LrSchedule:
    lr_max: float
    total_steps: int
    warmup_proportion: float = 0.1

    def __post_init__(self):
        if self.lr_max <= 0:
            raise UsageError("lr_max must be positive")
        if self.total_steps < 1:
            raise UsageError("total_steps must be a positive integer")
        if not 0.0 < self.warmup_proportion < 1.0:
            raise UsageError("warmup_proportion must lie in (0, 1)")

    @property
    def warmup_steps(self) -> float:
        return self.warmup_proportion * self.total_steps


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear ramp 0 -> lr_max over the warmup, then linear decay to 0 at ``total_steps``."""
    T = schedule.total_steps
    if step < 0 or step > T:
        raise UsageError(f"step {step} outside [0, {T}]")
    warm = schedule.warmup_steps
    if step <= warm:
        return schedule.lr_max * step / warm
    return schedule.lr_max * (T - step) / (T - warm)


def global_norm(grads: Sequence[Optional[np.ndarray]]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None)))


def clip_global_norm(grads: Sequence[Optional[np.ndarray]], max_norm: Optional[float]):
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``.

    ``max_norm`` of ``None`` or ``0`` disables clipping. Returns the (possibly
    rescaled) list and the norm measured before clipping.
    """
    norm = global_norm(grads)
    if not max_norm or norm <= max_norm:
        return list(grads), norm
    scale = max_norm / norm
    return [None if g is None else g * scale for g in grads], norm


class Adam:
    """Stateful wrapper binding :func:`adam_step` to a parameter list."""

    def __init__(self, params: Sequence, state: Optional[OptimizerState] = None):
        self.params = list(params)
        self.state = state or OptimizerState.for_params([p.data for p in self.params])

    def step(self, lr: float, grads: Optional[Sequence[Optional[np.ndarray]]] = None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> Dict[str, list]:
        return {"m": self.state.first_moment, "v": self.state.second_moment}
