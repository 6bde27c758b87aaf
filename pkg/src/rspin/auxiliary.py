"""Frame-wise pseudo-label classification loss and the combined objective."""

import numpy as np

from ._validation import check_units


def log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_inputs(logits, logits_pert, y):
    logits = np.asarray(logits, dtype=np.float64)
    logits_pert = np.asarray(logits_pert, dtype=np.float64)
    if logits.ndim != 2 or logits.shape != logits_pert.shape:
        raise ValueError(f"shape mismatch: {logits.shape} vs {logits_pert.shape}")
    B, V = logits.shape
    y = check_units(y, "labels", vocab=V)
    if y.size != B:
        raise ValueError(f"{y.size} labels for {B} frames")
    return logits, logits_pert, y


def aux_loss(logits, logits_pert, y):
    """Mean negative log-likelihood of ``y`` under both views, over ``2B`` frames."""
    logits, logits_pert, y = _check_inputs(logits, logits_pert, y)
    B = y.size
    rows = np.arange(B)
    ll = log_softmax(logits)[rows, y].sum() + log_softmax(logits_pert)[rows, y].sum()
    return float(-ll / (2 * B))


def aux_loss_grad(logits, logits_pert, y):
    """Gradients of :func:`aux_loss` w.r.t. both logit matrices."""
    logits, logits_pert, y = _check_inputs(logits, logits_pert, y)
    B = y.size
    rows = np.arange(B)
    grads = []
    for L in (logits, logits_pert):
        G = np.exp(log_softmax(L))
        G[rows, y] -= 1.0
        grads.append(G / (2 * B))
    return grads[0], grads[1]


def total_loss(l_spin, l_aux, lam=5.0):
    """Spin loss plus ``lam`` times the auxiliary loss (``lam`` > 0)."""
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    return l_spin + lam * l_aux
