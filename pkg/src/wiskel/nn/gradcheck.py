"""Finite-difference verification of analytic gradients.

``gradient_check`` re-evaluates a user-supplied loss closure under central
perturbations of every parameter element, so it is O(2 * num_elements) forward
passes; callers keep configurations small.
"""

from __future__ import annotations

import numpy as np

__all__ = ["GradCheckResult", "gradient_check"]


class GradCheckResult:
    """Per-parameter relative errors between analytic and numeric gradients."""

    def __init__(self, rel_errors):
        self.rel_errors = rel_errors

    def all_errors(self):
        if not self.rel_errors:
            return np.zeros(0)
        return np.concatenate([e.ravel() for e in self.rel_errors.values()])

    @property
    def max_error(self):
        errors = self.all_errors()
        return float(errors.max()) if errors.size else 0.0

    def fraction_below(self, threshold):
        errors = self.all_errors()
        if errors.size == 0:
            return 1.0
        return float((errors < threshold).mean())

    def worst(self, n=5):
        """The n largest (name, index, error) triples, for diagnostics."""
        triples = []
        for name, errs in self.rel_errors.items():
            for idx in np.ndindex(errs.shape):
                triples.append((float(errs[idx]), name, idx))
        triples.sort(reverse=True)
        return [(name, idx, err) for err, name, idx in triples[:n]]


def gradient_check(build_loss, params, h=1e-5, floor=1e-4):
    """Compare ``backward`` gradients against central finite differences.

    ``build_loss`` must rebuild the scalar loss from scratch on every call and
    read parameter values at call time (true for ParamStore-backed layers).
    ``params`` is a name -> Tensor mapping. The relative error for one element
    is |a - n| / max(floor, |a|, |n|); the floor keeps near-zero gradients from
    amplifying finite-difference noise into spurious relative error.
    """
    for p in params.values():
        p.grad = None
    loss = build_loss()
    loss.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    rel_errors = {}
    for name, p in params.items():
        errs = np.empty(p.data.shape)
        for idx in np.ndindex(p.data.shape):
            original = p.data[idx]
            p.data[idx] = original + h
            f_plus = float(build_loss().data)
            p.data[idx] = original - h
            f_minus = float(build_loss().data)
            p.data[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name][idx]
            errs[idx] = abs(a - numeric) / max(floor, abs(a), abs(numeric))
        rel_errors[name] = errs
    return GradCheckResult(rel_errors)
