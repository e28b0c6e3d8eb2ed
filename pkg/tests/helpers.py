"""Shared test oracles: central finite differences and relative-error checks."""

import numpy as np


def central_diff(f, theta, h=1e-5):
    """Central finite-difference gradient of scalar f at flat float64 theta."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp) - f(tm)) / (2.0 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    """Max coordinate-wise |a-b| / max(|a|, |b|, floor).

    The floor keeps finite-difference roundoff on near-zero coordinates from
    dominating the comparison.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def pack_params(params):
    """Flatten a list of Tensors into one vector plus unpack metadata."""
    flat = np.concatenate([p.data.reshape(-1) for p in params])
    shapes = [p.data.shape for p in params]
    return flat, shapes


def unpack_params(flat, shapes):
    out = []
    pos = 0
    for s in shapes:
        n = int(np.prod(s)) if s else 1
        out.append(flat[pos : pos + n].reshape(s))
        pos += n
    return out
