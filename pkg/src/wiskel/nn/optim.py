"""Adam optimizer operating on a ParamStore."""

from __future__ import annotations

import numpy as np

from .store import ParamStore

__all__ = ["Adam"]


class Adam:
    """Adam with bias correction. Moment buffers are keyed by parameter name.

    ``step`` raises :class:`MissingGradientError` (via the store) when any
    registered parameter has no gradient buffer, which catches layers that were
    registered but never wired into the loss graph.
    """

    def __init__(self, store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self):
        self.store.check_grads()
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.store.params().items():
            g = p.grad
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        self.store.zero_grads()
