"""Adam optimizer over named model parameters."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


class Adam:
    """Bias-corrected Adam, updating parameter tensors in place.

    Moment buffers are keyed by parameter name and match parameter shapes;
    the step counter increases by one per ``step`` call. With zero gradients
    the parameters are unchanged, and ``lr=0`` is the identity.
    """

    def __init__(self, named_params: list[tuple[str, Tensor]], *,
                 lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.named_params = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1 ** self.t
        correct2 = 1.0 - b2 ** self.t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise DimensionError(
                    f"adam: gradient shape {g.shape} does not match "
                    f"parameter {name} {p.data.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / correct1
            vhat = v / correct2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()
