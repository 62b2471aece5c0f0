"""Class-balanced focal loss and the combined training objective."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .errors import DimensionError

PROB_CLAMP = 1e-7


def class_balanced_weights(counts, beta):
    """``(1 - beta) / (1 - beta ** n)`` per class, counts floored at 1."""
    n = np.maximum(np.asarray(counts, dtype=np.float64), 1.0)
    if beta == 0.0:
        return np.ones_like(n)
    return (1.0 - beta) / (1.0 - np.power(beta, n))


def cb_focal_loss(probs, targets, class_counts, beta_cb=0.999, gamma=2.0):
    """Per-label binary focal loss with class-balanced weights, averaged over the batch.

    With ``p_t = y p + (1 - y)(1 - p)``:
    ``L = -(1/B) sum_i sum_l CB(n_l) (1 - p_t)**gamma log p_t``.
    """
    probs = nc.as_tensor(probs)
    y = np.asarray(targets, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise DimensionError(f"targets {y.shape} vs probabilities {probs.shape}")
    cb = class_balanced_weights(class_counts, beta_cb).astype(probs.dtype)
    if cb.shape != probs.shape[-1:]:
        raise DimensionError(f"{cb.shape[0]} class counts for {probs.shape[-1]} labels")
    B = probs.shape[0] if probs.ndim > 1 else 1
    p = nc.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_t = nc.add(nc.mul(p, 2.0 * y - 1.0), 1.0 - y)
    term = nc.mul(nc.power(nc.sub(1.0, p_t), gamma), nc.log(p_t))
    return nc.scale(nc.sum_(nc.mul(term, cb)), -1.0 / B)


def total_loss(l_focal, l_pwce, lam):
    """``L_focal + lam * L_pwce``."""
    return nc.add(l_focal, nc.scale(l_pwce, lam))
