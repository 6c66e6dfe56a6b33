"""Shared test utilities: central finite differences against tape gradients."""

import numpy as np

from blastsda import tensor as T


def finite_difference_grad(f, tensor, indices, h=1e-5):
    """Central-difference derivative of the scalar f() wrt tensor[indices]."""
    flat = tensor.data.reshape(-1)
    grads = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        grads.append((fp - fm) / (2.0 * h))
    return np.array(grads)


def check_gradients(f, tensors, rng, max_rel_err=1e-4, samples=6, h=1e-5):
    """Backprop f once, then spot-check each tensor's gradient against
    central differences. Returns the worst relative error seen."""
    for t in tensors:
        t.zero_grad()
    with T.Tape() as tape:
        out = f()
    T.backward(tape, out)
    worst = 0.0
    for t in tensors:
        analytic = (t.grad if t.grad is not None else np.zeros(t.shape)).reshape(-1)
        n = t.data.size
        idx = rng.choice(n, size=min(samples, n), replace=False)
        numeric = finite_difference_grad(f, t, idx, h=h)
        for i, num in zip(idx, numeric):
            denom = max(abs(num), abs(analytic[i]), 1e-8)
            worst = max(worst, abs(num - analytic[i]) / denom)
    for t in tensors:
        t.zero_grad()
    assert worst < max_rel_err, f"worst relative gradient error {worst:.3e}"
    return worst
