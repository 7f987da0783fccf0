"""Independent numerical oracles shared by the test modules.

Everything here is deliberately written without using the library code it
checks: finite differences, brute-force recomputation, exhaustive
enumeration.
"""

import math

import numpy as np


def finite_diff_grad(f, tensor, eps=1e-5):
    """Central-difference gradient of the scalar ``f()`` w.r.t. ``tensor``.

    Mutates ``tensor.data`` in place element by element and restores it.
    Use 64-bit tensors; 32-bit has too little headroom for eps=1e-5.
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(tensor.data.shape)


def finite_diff_grad_sampled(f, tensor, indices, eps=1e-5):
    """Central differences at a subset of flat ``indices`` only."""
    flat = tensor.data.reshape(-1)
    out = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return out


def rel_err(analytic, numeric):
    """Max-norm relative error between two gradient arrays."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def binomial_two_sided_enumeration(wins, n):
    """Exact two-sided p-value by summing all outcomes at most as likely."""
    probs = [math.comb(n, k) * 0.5 ** n for k in range(n + 1)]
    p_obs = probs[wins]
    total = sum(p for p in probs if p <= p_obs * (1.0 + 1e-12))
    return min(1.0, total)
