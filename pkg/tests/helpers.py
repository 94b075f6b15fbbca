"""Shared test utilities."""

import numpy as np

from qatlab import numerics as nx
from qatlab.numerics import Tensor


def model_grad_check(model, tokens, mode="FP16", per_tensor=3, seed=0, h=1e-5):
    """Finite-difference check of forward_loss w.r.t. every parameter tensor.

    For each tensor a few coordinates are checked: the largest-magnitude
    analytic gradient entries plus random ones. Returns {name: max rel error}.
    """
    rng = np.random.default_rng(seed)
    model.zero_grad()
    nx.backward(model.forward_loss(tokens, mode))
    analytic = {k: t.grad.copy() for k, t in model.params.items()}
    errors = {}
    for name, t in model.params.items():
        original = t

        def f(x, name=name):
            model.params[name] = x
            try:
                return model.forward_loss(tokens, mode)
            finally:
                model.params[name] = original

        flat = np.abs(analytic[name]).reshape(-1)
        top = list(np.argsort(flat)[::-1][:per_tensor])
        extra = list(rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False))
        coords = sorted({int(i) for i in top + extra if flat[i] > 1e-8})
        errors[name] = nx.grad_check(f, t.data, h=h, coords=coords) if coords else 0.0
        t.grad = None
    return errors
