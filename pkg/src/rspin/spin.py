"""Swapped-prediction clustering loss between a clean and a perturbed view.

Shapes follow the convention ``(B, K)`` for per-frame distributions over a
codebook of ``K`` unit-norm code vectors.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_frames, check_positive

LOG_FLOOR = 1e-30


@dataclass
class Codebook:
    """Code vectors (one per row) and the softmax temperature."""

    vectors: np.ndarray
    temperature: float = 0.1

    def __post_init__(self):
        self.vectors = check_frames(self.vectors, "codebook vectors")
        check_positive(self.temperature, "temperature")

    @property
    def size(self):
        return self.vectors.shape[0]

    @classmethod
    def random(cls, n_codes, dim, temperature=0.1, seed=None):
        """Codes drawn uniformly from the unit sphere."""
        rng = np.random.default_rng(seed)
        v = rng.standard_normal((n_codes, dim))
        return cls(l2_normalize(v), temperature)

    def renormalize(self):
        self.vectors = l2_normalize(self.vectors)


def l2_normalize(X, axis=1):
    return X / np.linalg.norm(X, axis=axis, keepdims=True)


def project_normalize(H, W, bias):
    """Affine projection followed by row-wise L2 normalization."""
    H = check_frames(H, "H")
    W = np.asarray(W, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != H.shape[1] or bias.shape != (W.shape[1],):
        raise ValueError(
            f"shape mismatch: H {H.shape}, W {W.shape}, bias {bias.shape}")
    Y = H @ W + bias
    norms = np.linalg.norm(Y, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("projected row has (near) zero norm; cannot normalize")
    return Y / norms


def softmax(S, axis=1):
    S = S - S.max(axis=axis, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=axis, keepdims=True)


def code_scores(Z, cb):
    """Dot products between frames and code vectors, shape ``(B, K)``."""
    return np.asarray(Z, dtype=np.float64) @ cb.vectors.T


def code_probs(Z, cb):
    """p(k | z_b) = softmax over k of (z_b . c_k) / temperature."""
    if not cb.temperature > 0:
        raise ValueError(f"temperature must be > 0, got {cb.temperature}")
    return softmax(code_scores(Z, cb) / cb.temperature)


def sinkhorn_smooth(logits, eps=0.05, n_iters=3):
    """Balanced soft assignments by Sinkhorn-Knopp on ``exp(logits / eps)``.

    Each iteration scales the columns to sum to ``B / K`` and then the rows to
    sum to 1, so rows are exact on return while columns are only as balanced
    as ``n_iters`` iterations allow.
    """
    L = np.asarray(logits, dtype=np.float64)
    if L.ndim != 2:
        raise ValueError(f"logits must be 2-D, got shape {L.shape}")
    if not np.all(np.isfinite(L)):
        raise ValueError("logits contain non-finite values")
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if int(n_iters) < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    B, K = L.shape
    A = L / eps
    Q = np.exp(A - A.max(axis=1, keepdims=True))
    for _ in range(int(n_iters)):
        Q *= (B / K) / Q.sum(axis=0, keepdims=True)
        Q /= Q.sum(axis=1, keepdims=True)
    return Q


def _check_same_shape(*mats):
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    shape = mats[0].shape
    if len(shape) != 2 or any(m.shape != shape for m in mats):
        raise ValueError(f"shape mismatch: {[m.shape for m in mats]}")
    return mats


def cross_entropy_rows(targets, probs):
    """Per-row cross-entropy ``-sum_k t log p`` with the log floored."""
    return -np.sum(targets * np.log(np.maximum(probs, LOG_FLOOR)), axis=1)


def spin_loss(P, P_pert, Q, Q_pert):
    """Symmetric swapped-prediction cross-entropy.

    ``Q_pert`` (targets from the perturbed view) supervises ``P`` and ``Q``
    supervises ``P_pert``; both terms are averaged over ``2B`` frames.
    """
    P, P_pert, Q, Q_pert = _check_same_shape(P, P_pert, Q, Q_pert)
    B = P.shape[0]
    a = np.sum(Q_pert * np.log(np.maximum(P, LOG_FLOOR)))
    b = np.sum(Q * np.log(np.maximum(P_pert, LOG_FLOOR)))
    # Sum the two views in a fixed (commutative) way so swapping them is exact.
    return -(a + b) / (2 * B)


def spin_logit_grad(P, targets):
    """d loss / d scaled-logits for one view's term, before the 1/(2B) factor."""
    return P * targets.sum(axis=1, keepdims=True) - targets


def spin_loss_grad(Z, Z_pert, cb, Q, Q_pert):
    """Analytic gradients of :func:`spin_loss` through :func:`code_probs`.

    Targets ``Q`` and ``Q_pert`` are treated as constants.

    Returns
    -------
    dZ, dZ_pert, dC : ndarray
        Gradients with respect to both views' normalized embeddings and the
        code vectors.
    """
    Z = np.asarray(Z, dtype=np.float64)
    Z_pert = np.asarray(Z_pert, dtype=np.float64)
    Q, Q_pert = _check_same_shape(Q, Q_pert)
    B = Z.shape[0]
    if Z_pert.shape != Z.shape or Q.shape != (B, cb.size):
        raise ValueError("shape mismatch between embeddings, codebook and targets")
    C = cb.vectors
    tau = cb.temperature
    G = spin_logit_grad(code_probs(Z, cb), Q_pert) / (2 * B * tau)
    G_pert = spin_logit_grad(code_probs(Z_pert, cb), Q) / (2 * B * tau)
    dZ = G @ C
    dZ_pert = G_pert @ C
    dC = G.T @ Z + G_pert.T @ Z_pert
    return dZ, dZ_pert, dC
