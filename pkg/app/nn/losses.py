from typing import Tuple

import numpy as np

from app.core.exceptions import NumericError

PROB_CLAMP = 1e-7


def _clamp(p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    clamped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    return clamped, inside


def bce_pair_loss(score_pos, score_neg) -> float:
    """-ln(s_pos) - ln(1 - s_neg), averaged when given batches."""
    loss, _, _ = bce_pair_loss_and_grad(score_pos, score_neg)
    return loss


def bce_pair_loss_and_grad(score_pos, score_neg) -> Tuple[float, np.ndarray, np.ndarray]:
    pos = np.atleast_1d(np.asarray(score_pos, dtype=np.float64))
    neg = np.atleast_1d(np.asarray(score_neg, dtype=np.float64))
    if pos.shape != neg.shape:
        raise ValueError(f"score batches differ in shape: {pos.shape} vs {neg.shape}")
    pos_c, pos_in = _clamp(pos)
    neg_c, neg_in = _clamp(neg)
    n = pos.size
    loss = float(np.mean(-np.log(pos_c) - np.log1p(-neg_c)))
    if not np.isfinite(loss):
        raise NumericError("non-finite pair loss")
    grad_pos = np.where(pos_in, -1.0 / (pos_c * n), 0.0)
    grad_neg = np.where(neg_in, 1.0 / ((1.0 - neg_c) * n), 0.0)
    return loss, grad_pos, grad_neg


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood of integer labels under row-wise probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = probs.shape[0]
    rows = np.arange(n)
    picked, inside = _clamp(probs[rows, labels])
    loss = float(np.mean(-np.log(picked)))
    if not np.isfinite(loss):
        raise NumericError("non-finite cross-entropy loss")
    grad = np.zeros_like(probs)
    grad[rows, labels] = np.where(inside, -1.0 / (picked * n), 0.0)
    return loss, grad


def mse(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    loss = float(np.mean(diff**2))
    if not np.isfinite(loss):
        raise NumericError("non-finite squared-error loss")
    return loss, 2.0 * diff / diff.size
