"""Central-difference gradient checks for tensor ops.

Checks run in float64: with float32 storage a step of 1e-4 loses most of the
significant digits of the difference quotient.
"""

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor, precision


def _weighted_value(fn, arrays, weights):
    out = fn(*[Tensor(a) for a in arrays])
    return float((out.data * weights).sum())


def gradient_errors(fn, arrays, h=1e-4, seed=0, floor=1e-4, wrt=None):
    """Max elementwise relative error between tape and finite-difference gradients.

    ``fn`` maps tensors to a tensor of any shape; it is reduced to a scalar by
    a fixed random weighting so every output element contributes. Relative
    error is ``|a - n| / max(|a|, |n|, floor)``. ``wrt`` picks which inputs
    to check (default all). Returns a list with one error per checked input.
    """
    wrt = range(len(arrays)) if wrt is None else wrt
    with precision(np.float64):
        arrays = [np.array(a, dtype=np.float64) for a in arrays]
        tensors = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
        with Tape() as tape:
            out = fn(*tensors)
            weights = np.random.default_rng(seed).normal(size=out.shape)
            loss = T.sum(T.mul(out, Tensor(weights)))
        tape.backward(loss)
        errors = []
        for i in wrt:
            analytic = tensors[i].grad
            numeric = np.zeros_like(arrays[i])
            flat = arrays[i].reshape(-1)
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + h
                up = _weighted_value(fn, arrays, weights)
                flat[j] = old - h
                down = _weighted_value(fn, arrays, weights)
                flat[j] = old
                numeric.reshape(-1)[j] = (up - down) / (2 * h)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
            errors.append(float((np.abs(analytic - numeric) / denom).max(initial=0.0)))
    return errors


def max_gradient_error(fn, arrays, **kwargs):
    return max(gradient_errors(fn, arrays, **kwargs), default=0.0)
