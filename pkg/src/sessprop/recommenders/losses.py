"""BPR-max ranking loss with analytic gradients.

For a target score ``r_t`` and negative scores ``r_j`` with softmax weights
``s_j = softmax(r)_j``::

    L = -log(sum_j s_j * sigmoid(r_t - r_j)) + lam * sum_j s_j * r_j**2

The first term is evaluated in log space so it stays finite when the target
is far below the negatives.
"""

from __future__ import annotations

import numpy as np

from ..core import InvalidInputError


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def bpr_max_rows(target: np.ndarray, negatives: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise BPR-max.

    ``target`` has shape (B,), ``negatives`` (B, M). Returns the per-row loss
    and its gradients with respect to ``target`` and ``negatives``.
    """
    target = np.asarray(target, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.ndim != 2 or negatives.shape[1] == 0:
        raise InvalidInputError("BPR-max needs at least one negative score per row")

    log_s = negatives - _logsumexp(negatives, axis=1)[:, None]
    s = np.exp(log_s)
    diff = target[:, None] - negatives
    log_d = _log_sigmoid(diff)
    d = np.exp(log_d)
    log_a = _logsumexp(log_s + log_d, axis=1)
    q = np.exp(log_s + log_d - log_a[:, None])  # s_j d_j / A

    sq = negatives * negatives
    reg = np.sum(s * sq, axis=1)
    loss = np.maximum(-log_a, 0.0) + lam * reg  # A <= 1 exactly; clamp rounding

    d_target = -np.sum(q * (1.0 - d), axis=1)
    d_neg = s - q * d + lam * s * (sq - reg[:, None] + 2.0 * negatives)
    return loss, d_target, d_neg


def bpr_max_loss(target_score: float, negative_scores, lam: float = 1.0) -> float:
    negatives = np.atleast_1d(np.asarray(negative_scores, dtype=np.float64))
    if negatives.size == 0:
        raise InvalidInputError("BPR-max needs at least one negative score")
    if not (np.isfinite(target_score) and np.all(np.isfinite(negatives))):
        raise InvalidInputError("scores must be finite")
    loss, _, _ = bpr_max_rows(np.array([target_score]), negatives[None, :], lam)
    return float(loss[0])


def bpr_max_grad(target_score: float, negative_scores, lam: float = 1.0) -> tuple[float, np.ndarray]:
    negatives = np.atleast_1d(np.asarray(negative_scores, dtype=np.float64))
    _, d_t, d_n = bpr_max_rows(np.array([target_score]), negatives[None, :], lam)
    return float(d_t[0]), d_n[0]


def bpr_max_in_batch(scores: np.ndarray, lam: float) -> tuple[float, np.ndarray]:
    """Mean BPR-max over a (B, B) score block whose diagonal holds the targets.

    Every off-diagonal entry of a row is a negative for that row. Returns the
    mean loss and its gradient with respect to ``scores``.
    """
    b = scores.shape[0]
    off = ~np.eye(b, dtype=bool)
    loss, d_t, d_n = bpr_max_rows(np.diag(scores), scores[off].reshape(b, b - 1), lam)
    grad = np.zeros_like(scores)
    grad[off] = d_n.ravel()
    grad[np.diag_indices(b)] = d_t
    return float(loss.mean()), grad / b
