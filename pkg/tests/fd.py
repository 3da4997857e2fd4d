"""Central finite-difference gradients, the oracle for every backward rule."""

import numpy as np


def fd_grad(f, arrays, eps=1e-5):
    """Gradient of scalar f() w.r.t. each array, by central differences.

    `f` must read the arrays in-place (they are perturbed and restored).
    """
    grads = []
    for a in arrays:
        flat = a.reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * eps)
        grads.append(g.reshape(a.shape))
    return grads


def max_rel_err(analytic, numeric, floor=1e-6):
    """Worst elementwise |a-n| / max(|a|, |n|, floor).

    The floor keeps finite-difference noise on near-zero components from
    dominating the ratio.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
