from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autograd import Tensor
from .errors import ContractError


@dataclass
class AmsgradState:
    """Moment estimates for AMSGrad, the Adam variant that keeps a running max of v.

    ``m``, ``v`` and ``v_max`` are allocated on the first step, one array per
    parameter in the order the parameters are passed.
    """

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    bias_correction: bool = True
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    v_max: list[np.ndarray] = field(default_factory=list)

    def step_size(self) -> float:
        if not self.bias_correction:
            return self.lr
        return self.lr * np.sqrt(1.0 - self.beta2**self.t) / (1.0 - self.beta1**self.t)


def amsgrad_step(state: AmsgradState, params: Sequence[Tensor]) -> None:
    """Apply one update in place and zero the gradients."""
    for k, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {k} (shape {p.shape}) has no gradient")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        state.v_max = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ContractError(f"optimizer tracks {len(state.m)} parameters, got {len(params)}")

    state.t += 1
    lr_t = state.step_size()
    b1, b2 = state.beta1, state.beta2
    for p, m, v, v_max in zip(params, state.m, state.v, state.v_max):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        np.maximum(v_max, v, out=v_max)
        p.data -= lr_t * m / (np.sqrt(v_max) + state.epsilon)
        p.grad = np.zeros_like(p.data)
