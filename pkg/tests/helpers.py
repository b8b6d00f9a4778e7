"""Shared test utilities: central finite differences and error metrics."""

import numpy as np


def numeric_grads(loss_fn, arrays, eps=1e-3):
    """Central-difference gradients of loss_fn() w.r.t. each array in-place.

    loss_fn recomputes the scalar loss from the current array contents, so
    it must read `arrays` afresh on every call.
    """
    out = []
    for arr in arrays:
        g = np.zeros(arr.shape, dtype=np.float64)
        it = np.nditer(arr, flags=["multi_index"], op_flags=["readwrite"])
        for _ in it:
            idx = it.multi_index
            orig = float(arr[idx])
            arr[idx] = orig + eps
            fp = float(loss_fn())
            arr[idx] = orig - eps
            fm = float(loss_fn())
            arr[idx] = orig
            g[idx] = (fp - fm) / (2.0 * eps)
        out.append(g)
    return out


def max_rel_err(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(floor, |a| + |n|), maximized."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(floor, np.abs(a) + np.abs(n))
    return float(np.max(np.abs(a - n) / denom))
