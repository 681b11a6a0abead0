"""Adam optimizer over named Parameters."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


class Adam:
    """Adaptive-moment optimizer, lr 1e-3, betas (0.9, 0.999), no weight decay.

    Parameters whose gradient is exactly zero are skipped entirely (their
    moments and step counts stay untouched), so an objective that never
    touches a sub-network provably leaves it bit-identical.
    """

    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = [0] * len(self.params)

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if not p.grad.any():
                continue
            self.t[i] += 1
            t = self.t[i]
            m = self.m[i]
            v = self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {
            "m": {p.name: m.copy() for p, m in zip(self.params, self.m)},
            "v": {p.name: v.copy() for p, v in zip(self.params, self.v)},
            "t": {p.name: t for p, t in zip(self.params, self.t)},
        }

    def load_state_dict(self, state: dict) -> None:
        for i, p in enumerate(self.params):
            self.m[i] = np.array(state["m"][p.name], dtype=np.float64)
            self.v[i] = np.array(state["v"][p.name], dtype=np.float64)
            self.t[i] = int(state["t"][p.name])
