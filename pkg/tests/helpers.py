"""Shared test oracles: finite differences and an independent PN routine."""

import numpy as np


def central_diff(f, x, step=1e-5):
    """Central finite-difference gradient of scalar f at flat array x."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        grad.flat[i] = (f(xp) - f(xm)) / (2 * step)
    return grad


def rel_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return np.max(np.abs(a - b) / denom)


def pn_reference(support_groups, query_vecs):
    """Plain Prototypical Networks: nearest support-mean prototype.

    Written independently of the package; used to cross-check the
    bypass-everything configuration. Returns predicted class indices.
    """
    protos = np.stack([np.mean(np.atleast_2d(g), axis=0)
                       for g in support_groups])
    preds = []
    for q in np.atleast_2d(query_vecs):
        d = [float(np.dot(q - p, q - p)) for p in protos]
        preds.append(int(np.argmin(d)))
    return np.array(preds)
