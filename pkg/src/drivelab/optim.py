"""Adam optimizer with a per-episode learning-rate decay."""

import numpy as np


class TrainingDiverged(RuntimeError):
    """Raised when a gradient or loss turns non-finite."""


class Adam:
    """Standard Adam (beta1=0.9, beta2=0.999, eps=1e-8).

    The effective learning rate is ``base_lr * decay**episodes``; callers
    invoke :meth:`decay_lr` once per training episode.
    """

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, lr_decay: float = 0.996):
        self.params = list(params)
        self.base_lr = float(lr)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr_decay = lr_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(
                    f"non-finite gradient in parameter {i} (shape {p.data.shape})"
                )
            m = self.m[i]
            v = self.v[i]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps))
            p.data -= update.astype(p.data.dtype, copy=False)

    def decay_lr(self):
        self.lr *= self.lr_decay

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self):
        """Flat view of optimizer state for checkpointing."""
        return {"m": self.m, "v": self.v, "t": self.t, "lr": self.lr}

    def load_state(self, m, v, t, lr):
        if len(m) != len(self.params) or len(v) != len(self.params):
            raise ValueError("optimizer state length mismatch")
        self.m = [np.asarray(a, dtype=p.data.dtype) for a, p in zip(m, self.params)]
        self.v = [np.asarray(a, dtype=p.data.dtype) for a, p in zip(v, self.params)]
        self.t = int(t)
        self.lr = float(lr)
