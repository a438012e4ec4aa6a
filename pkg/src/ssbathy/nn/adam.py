"""Adam optimizer over Tensor parameters with a per-epoch decayed rate."""

from __future__ import annotations

import numpy as np

from .tensor import NumericalFailure, Tensor


class AdamState:
    """Adam moments plus its learning-rate schedule.

    lr_decay is a multiplicative per-epoch factor applied via start_epoch();
    callers with other schedules (e.g. linear) may set .lr directly instead.
    """

    def __init__(
        self,
        params,
        lr: float = 2e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        lr_decay: float = 1.0,
    ):
        self.params: list[Tensor] = list(params)
        if not all(p.requires_grad for p in self.params):
            raise ValueError("all optimized tensors must require gradients")
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0
        self.initial_lr = lr
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr_decay = lr_decay

    def start_epoch(self, epoch: int) -> float:
        """Apply the geometric schedule for a 0-based epoch; returns the rate."""
        self.lr = self.initial_lr * self.lr_decay**epoch
        return self.lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """One Adam update in place; parameters without grads are skipped."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalFailure("non-finite gradient in Adam update")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
