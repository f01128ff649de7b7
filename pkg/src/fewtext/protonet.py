"""Prototype-based classification head.

Posterior over classes is a softmax of negative squared Euclidean
distances to the prototypes; training uses mean cross-entropy over the
query set. All functions are pure and operate on plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_PROB_FLOOR = -50.0


class NumericError(ArithmeticError):
    """Raised when representations or prototypes are non-finite."""


@dataclass(frozen=True)
class PrototypeSet:
    class_ids: tuple
    vectors: np.ndarray  # (N, d)

    def __post_init__(self):
        if len(self.class_ids) != self.vectors.shape[0]:
            raise ValueError("one vector per class id required")
        if len(self.class_ids) < 2:
            raise ValueError("need at least 2 classes")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("class ids must be unique")
        if not np.all(np.isfinite(self.vectors)):
            raise NumericError("prototypes contain non-finite values")


@dataclass(frozen=True)
class Posterior:
    probs: np.ndarray  # (n, N)
    log_probs: np.ndarray  # (n, N)


def _squared_distances(query_reps: np.ndarray, protos: np.ndarray) -> np.ndarray:
    diff = query_reps[:, None, :] - protos[None, :, :]
    return np.sum(diff * diff, axis=2)


def class_posteriors(query_reps, prototypes: PrototypeSet) -> Posterior:
    """p_c proportional to exp(-||v - P_c||^2), via stabilized log-sum-exp."""
    query_reps = np.atleast_2d(np.asarray(query_reps, dtype=float))
    if not np.all(np.isfinite(query_reps)):
        raise NumericError("query representations contain non-finite values")
    if query_reps.shape[1] != prototypes.vectors.shape[1]:
        raise ValueError("query/prototype dim mismatch")
    logits = -_squared_distances(query_reps, prototypes.vectors)
    peak = logits.max(axis=1, keepdims=True)
    shifted = logits - peak
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    return Posterior(probs=np.exp(log_probs), log_probs=log_probs)


def cross_entropy(posterior: Posterior, targets) -> float:
    """Mean negative log-probability of the true classes.

    Log-probabilities are floored at -50 so a vanishing probability yields
    a large finite loss instead of infinity.
    """
    targets = np.asarray(targets)
    n = posterior.log_probs.shape[0]
    if targets.shape[0] != n:
        raise ValueError("one target per query required")
    picked = posterior.log_probs[np.arange(n), targets]
    picked = np.maximum(picked, LOG_PROB_FLOOR)
    return float(-picked.mean())


def classifier_backward(query_reps, prototypes: PrototypeSet, targets):
    """Gradients of the mean cross-entropy w.r.t. query reps and prototypes.

    Returns (d_query (n, d), d_protos (N, d)).
    """
    query_reps = np.atleast_2d(np.asarray(query_reps, dtype=float))
    targets = np.asarray(targets)
    post = class_posteriors(query_reps, prototypes)
    n, n_classes = post.probs.shape
    one_hot = np.zeros((n, n_classes))
    one_hot[np.arange(n), targets] = 1.0
    # loss = mean_q -log softmax(-d_q)[y]; with z = -d, dL/dz = (p - y)/n
    d_dist = (one_hot - post.probs) / n  # dL / d(squared distance)
    diff = query_reps[:, None, :] - prototypes.vectors[None, :, :]  # (n, N, d)
    d_query = np.einsum("qc,qcd->qd", d_dist, 2.0 * diff)
    d_protos = np.einsum("qc,qcd->cd", d_dist, -2.0 * diff)
    return d_query, d_protos


def predict(query_reps, prototypes: PrototypeSet) -> np.ndarray:
    """Argmax-posterior class index per query; ties go to the lower index."""
    query_reps = np.atleast_2d(np.asarray(query_reps, dtype=float))
    dists = _squared_distances(query_reps, prototypes.vectors)
    return dists.argmin(axis=1)


def accuracy(query_reps, prototypes: PrototypeSet, targets) -> float:
    preds = predict(query_reps, prototypes)
    return float(np.mean(preds == np.asarray(targets)))
