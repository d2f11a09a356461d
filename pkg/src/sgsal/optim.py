"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

__all__ = ["AdamW", "adamw_step"]


def adamw_step(p, g, m, v, step, lr=1e-4, weight_decay=1e-4,
               betas=(0.9, 0.999), eps=1e-8):
    """One in-place AdamW update on array p with gradient g and first/second
    moment buffers m, v. step is 1-based. Returns nothing; p, m, v mutate."""
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    mhat = m / (1.0 - b1 ** step)
    vhat = v / (1.0 - b2 ** step)
    p -= lr * weight_decay * p  # decoupled decay, not part of the moment update
    p -= lr * mhat / (np.sqrt(vhat) + eps)


class AdamW:
    """Optimizer over a name -> Tensor parameter dict."""

    def __init__(self, params, lr=1e-4, weight_decay=1e-4,
                 betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self._v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        self.step_count += 1
        for name, t in self.params.items():
            if t.grad is None:
                g = np.zeros_like(t.data)
            else:
                g = t.grad
            adamw_step(t.data, g, self._m[name], self._v[name],
                       self.step_count, lr=self.lr,
                       weight_decay=self.weight_decay,
                       betas=self.betas, eps=self.eps)
