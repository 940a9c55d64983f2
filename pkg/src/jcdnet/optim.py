"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(_array(p)) for p in params]
        state.second_moment = [np.zeros_like(_array(p)) for p in params]
        return state


def _array(p) -> np.ndarray:
    return p.data if isinstance(p, Tensor) else p


def adam_step(params, grads, state: AdamState) -> None:
    """One in-place Adam update of ``params`` (tensors or arrays).

    Weight decay is decoupled: ``p <- p - lr*wd*p`` happens before the
    bias-corrected moment update.  A ``None`` gradient counts as zero.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(_array(p)) for p in params]
        state.second_moment = [np.zeros_like(_array(p)) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeError("optimizer state does not match parameter list")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        data = _array(p)
        if g is None:
            g = np.zeros_like(data)
        if g.shape != data.shape or state.first_moment[i].shape != data.shape:
            raise ShapeError(f"param {i}: shape {data.shape} vs grad {g.shape}")
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.weight_decay:
            data -= state.lr * state.weight_decay * data
        data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
