"""Minimal Adam for flat numpy parameter vectors."""

import numpy as np


class Adam:
    def __init__(self, size, step_size=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad, scale=1.0):
        """Return the descent increment for ``grad`` (to be added to params)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return -self.step_size * scale * m_hat / (np.sqrt(v_hat) + self.eps)
