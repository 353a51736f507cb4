"""Pure numpy versions of the prototype-metric kernels (fallback path)."""

import numpy as np


def pairwise_distances(a, b, eps):
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature extent mismatch: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :].astype(np.float64) - b[None, :, :].astype(np.float64)
    sq = np.einsum("ijt,ijt->ij", diff, diff)
    return np.sqrt(sq + eps).astype(a.dtype, copy=False)


def pairwise_distances_backward(a, b, dist, gout):
    coef = gout.astype(np.float64) / dist.astype(np.float64)
    diff = a[:, None, :].astype(np.float64) - b[None, :, :].astype(np.float64)
    g = coef[:, :, None] * diff
    return g.sum(axis=1).astype(a.dtype), (-g.sum(axis=0)).astype(b.dtype)


def masked_min(x, mask, axis):
    mask = mask.astype(bool)
    if mask.shape != x.shape:
        raise ValueError("mask shape does not match input")
    if not mask.any(axis=axis).all():
        raise ValueError("min over an empty extent")
    filled = np.where(mask, x, np.inf)
    idx = np.argmin(filled, axis=axis)
    vals = np.take_along_axis(filled, np.expand_dims(idx, axis), axis=axis)
    return vals.squeeze(axis).astype(x.dtype), idx.astype(np.int64)
