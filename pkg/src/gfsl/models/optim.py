from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    """Plain gradient descent (``variant="sgd"``) or AdamW.

    AdamW uses decoupled weight decay: parameters shrink by
    ``lr * weight_decay`` before the bias-corrected Adam step.
    """

    variant: str = "adamw"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer variant {self.variant!r}")

    def apply(self, params: list, grads: list) -> list:
        """Return updated copies of ``params``; moment buffers advance in place."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        self.step += 1
        if self.variant == "sgd":
            return [p - self.lr * g for p, g in zip(params, grads)]
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        for p, m in zip(params, self.m):
            if p.shape != m.shape:
                raise ValueError(f"moment buffer {m.shape} does not match parameter {p.shape}")
        b1, b2, t = self.beta1, self.beta2, self.step
        corr1 = 1.0 - b1**t
        corr2 = 1.0 - b2**t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            p = p * (1.0 - self.lr * self.weight_decay)
            denom = np.sqrt(self.v[i]) / np.sqrt(corr2) + self.eps
            out.append(p - (self.lr / corr1) * self.m[i] / denom)
        return out

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.variant, self.lr, self.beta1, self.beta2, self.eps, self.weight_decay,
                              self.step, [a.copy() for a in self.m], [a.copy() for a in self.v])
