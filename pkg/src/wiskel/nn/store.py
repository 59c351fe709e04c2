"""Central registry for model parameters and persistent buffers.

Every trainable array lives in one :class:`ParamStore` under a hierarchical
dotted name ("encoder0.conv1.weight"). The store owns the single seeded RNG
used for initialization, so two models built with the same seed and the same
registration order start bit-identical. Buffers hold non-trained state such as
normalization running statistics; they are saved and restored alongside
parameters but never receive gradients.
"""

from __future__ import annotations

import numpy as np

from ..errors import CheckpointError, MissingGradientError
from .tensor import Tensor

__all__ = ["ParamStore"]


class ParamStore:
    def __init__(self, seed=0):
        self.rng = np.random.Generator(np.random.PCG64(int(seed)))
        self._params = {}
        self._buffers = {}

    # -- registration --------------------------------------------------------
    def param_uniform(self, name, shape, fan_in):
        """Register a parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        self._check_new(name)
        bound = 1.0 / np.sqrt(float(fan_in))
        data = self.rng.uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def param_constant(self, name, shape, value):
        """Register a parameter filled with ``value`` (no RNG draw)."""
        self._check_new(name)
        t = Tensor(np.full(shape, float(value)), requires_grad=True)
        self._params[name] = t
        return t

    def param_array(self, name, values):
        """Register a parameter initialized from an explicit array (no RNG draw)."""
        self._check_new(name)
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def buffer(self, name, array):
        """Register a mutable non-trained array (e.g. running statistics)."""
        self._check_new(name)
        arr = np.array(array, dtype=np.float64)
        self._buffers[name] = arr
        return arr

    def _check_new(self, name):
        if name in self._params or name in self._buffers:
            raise ValueError(f"name already registered: {name!r}")

    # -- access ---------------------------------------------------------------
    def __getitem__(self, name):
        if name in self._params:
            return self._params[name]
        raise KeyError(name)

    def __contains__(self, name):
        return name in self._params or name in self._buffers

    def params(self):
        """Name -> Tensor mapping in registration order."""
        return dict(self._params)

    def buffers(self):
        """Name -> ndarray mapping in registration order."""
        return dict(self._buffers)

    def num_params(self):
        """Total count of trainable scalars."""
        return int(sum(t.data.size for t in self._params.values()))

    def param_sizes(self):
        """Name -> element count, in registration order."""
        return {name: int(t.data.size) for name, t in self._params.items()}

    # -- gradients -------------------------------------------------------------
    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()

    def check_grads(self):
        """Raise :class:`MissingGradientError` if any parameter has no gradient.

        A missing gradient after a backward pass means a registered parameter
        never entered the graph, which is almost always a wiring bug.
        """
        missing = [n for n, t in self._params.items() if t.grad is None]
        if missing:
            raise MissingGradientError(missing)

    # -- state dict --------------------------------------------------------------
    def state(self):
        """All arrays (parameters then buffers) keyed by name, in order."""
        out = {name: t.data for name, t in self._params.items()}
        out.update(self._buffers)
        return out

    def load_state(self, mapping):
        """Copy arrays from ``mapping`` into the registered slots.

        Every registered name must be present with the exact registered shape;
        unknown names are rejected. Raises :class:`CheckpointError` on any
        mismatch so a truncated or foreign file cannot half-load.
        """
        expected = self.state()
        missing = sorted(set(expected) - set(mapping))
        if missing:
            raise CheckpointError(f"state is missing entries: {', '.join(missing)}")
        extra = sorted(set(mapping) - set(expected))
        if extra:
            raise CheckpointError(f"state has unknown entries: {', '.join(extra)}")
        for name, current in expected.items():
            incoming = np.asarray(mapping[name], dtype=np.float64)
            if incoming.shape != current.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: "
                    f"expected {current.shape}, got {incoming.shape}"
                )
        for name, t in self._params.items():
            t.data = np.array(mapping[name], dtype=np.float64)
            t.grad = None
        for name, buf in self._buffers.items():
            buf[...] = np.asarray(mapping[name], dtype=np.float64)
