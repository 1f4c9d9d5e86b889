"""Adam optimizer and the poly learning-rate schedule"""
import numpy as np
from typing import List, Optional

from config import ADAM_BETAS, ADAM_EPS, LR_POWER
from dtsl.tensor import Tensor


def lr_schedule(eta0: float, iteration: int, max_iter: int, power: float = LR_POWER) -> float:
    """eta0 * (1 - iteration / max_iter) ** power"""
    if max_iter <= 0:
        raise ValueError(f"max_iter must be positive, got {max_iter}")
    if iteration < 0 or iteration > max_iter:
        raise ValueError(f"iteration {iteration} outside 0..{max_iter}")
    return eta0 * (1.0 - iteration / max_iter) ** power


class AdamOptimizer:
    """Adam over a fixed list of student parameters"""

    def __init__(self, parameters: List[Tensor], lr: float = 1e-3,
                 betas=ADAM_BETAS, eps: float = ADAM_EPS):
        self.params = list(parameters)
        for p in self.params:
            if not p.requires_grad:
                raise ValueError("AdamOptimizer: every parameter must require gradients")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def owns(self, tensor: Tensor) -> bool:
        return any(p is tensor for p in self.params)

    def step(self, lr: Optional[float] = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (p.grad ** 2)
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
