"""Entropic optimal transport and query-based prototype augmentation.

Per class: build a squared-Euclidean cost matrix between the query set and
the class support set, solve the entropic OT problem with a log-domain
Sinkhorn solver, retrieve the R queries that are cheapest to transport,
and fold their information into the class prototype via barycentric
projection. Transport plans are treated as constants under differentiation;
gradients reach the representations only through the fixed convex weights.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class DegeneratePlanError(ValueError):
    """Raised when a transport-plan row carries no mass."""


class UnsupportedSizeError(ValueError):
    """Raised when the brute-force oracle is asked for too large a problem."""


def cost_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, negative round-off clamped to 0."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dim mismatch: {a.shape[1]} vs {b.shape[1]}")
    sq_a = np.sum(a * a, axis=1)[:, None]
    sq_b = np.sum(b * b, axis=1)[None, :]
    c = sq_a + sq_b - 2.0 * (a @ b.T)
    np.maximum(c, 0.0, out=c)
    return c


@dataclass
class TransportPlan:
    matrix: np.ndarray  # (m, k) nonnegative coupling
    row_marginal: np.ndarray  # (m,) uniform 1/m
    col_marginal: np.ndarray  # (k,) uniform 1/k
    epsilon: float
    iterations_used: int
    marginal_violation: float
    converged: bool
    cost: float  # realized transport cost <C, T>


def sinkhorn(c: np.ndarray, epsilon: float, tol: float = 1e-6,
             max_iter: int = 1000) -> TransportPlan:
    """Log-domain-stabilized Sinkhorn iterations with uniform marginals.

    The regularization is annealed from mean(C) down to ``epsilon``
    (halving each stage, potentials carried over), which keeps convergence
    fast even for near-unregularized targets. Iterates until the worst
    marginal residual drops below ``tol`` or ``max_iter`` is reached;
    non-convergence is flagged, not fatal.
    """
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix contains NaN/Inf")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    m, k = c.shape
    a = np.full(m, 1.0 / m)
    b = np.full(k, 1.0 / k)
    log_a, log_b = np.log(a), np.log(b)

    schedule = []
    eps_warm = float(np.mean(c))
    while eps_warm > epsilon * 2 and len(schedule) < 60:
        schedule.append(eps_warm)
        eps_warm /= 2.0
    schedule.append(epsilon)

    f = np.zeros(m)
    g = np.zeros(k)
    it = 0
    violation = np.inf

    def sweep(eps):
        nonlocal f, g
        # f_i = eps*(log a_i - logsumexp_j (g_j - C_ij)/eps)
        f = eps * (log_a - _logsumexp((g[None, :] - c) / eps, axis=1))
        g = eps * (log_b - _logsumexp((f[:, None] - c) / eps, axis=0))

    for eps in schedule[:-1]:
        if it >= max_iter:
            break
        it += 1
        sweep(eps)
    while it < max_iter:
        it += 1
        sweep(epsilon)
        t = np.exp((f[:, None] + g[None, :] - c) / epsilon)
        violation = max(
            np.max(np.abs(t.sum(axis=1) - a)), np.max(np.abs(t.sum(axis=0) - b))
        )
        if violation < tol:
            break
    t = np.exp((f[:, None] + g[None, :] - c) / epsilon)
    converged = violation < tol
    t = _round_to_marginals(t, a, b)
    final_violation = max(
        np.max(np.abs(t.sum(axis=1) - a)), np.max(np.abs(t.sum(axis=0) - b))
    )
    return TransportPlan(
        matrix=t,
        row_marginal=a,
        col_marginal=b,
        epsilon=epsilon,
        iterations_used=it,
        marginal_violation=final_violation,
        converged=converged,
        cost=float(np.sum(c * t)),
    )


def _round_to_marginals(t: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project a near-feasible plan onto the exact marginal polytope.

    Rows then columns are scaled down to their budgets and the leftover
    mass is spread as a rank-one correction, so the result is nonnegative
    and feasible up to floating-point round-off.
    """
    t = t.copy()
    row = t.sum(axis=1)
    scale = np.minimum(1.0, np.divide(a, row, out=np.ones_like(a),
                                      where=row > 0))
    t *= scale[:, None]
    col = t.sum(axis=0)
    scale = np.minimum(1.0, np.divide(b, col, out=np.ones_like(b),
                                      where=col > 0))
    t *= scale[None, :]
    err_a = a - t.sum(axis=1)
    err_b = b - t.sum(axis=0)
    total = err_a.sum()
    if total > 0:
        t += np.outer(err_a, err_b) / total
    return t


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    peak = np.max(x, axis=axis, keepdims=True)
    out = peak + np.log(np.sum(np.exp(x - peak), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def exact_ot_oracle(c: np.ndarray):
    """Brute-force OT with uniform marginals on a square cost matrix.

    Enumerates all n! permutation couplings (the Birkhoff vertices) and
    returns (plan, cost) of the minimizer, scaled by 1/n. Only intended as
    a test oracle; refuses n > 8.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise UnsupportedSizeError(f"oracle needs a square matrix, got {c.shape}")
    n = c.shape[0]
    if n > 8:
        raise UnsupportedSizeError(f"oracle supports n <= 8, got {n}")
    best_cost = np.inf
    best_perm = None
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        cost = c[rows, perm].sum() / n
        if cost < best_cost:
            best_cost = cost
            best_perm = perm
    plan = np.zeros((n, n))
    plan[rows, best_perm] = 1.0 / n
    return plan, float(best_cost)


def retrieve_top_r(plan: TransportPlan, c: np.ndarray, r: int) -> list:
    """Indices of the R queries cheapest to transport to the support set.

    Each query is scored by its per-unit-mass transport cost; ties break
    toward the lower query index. Returns min(R, m) indices.
    """
    if r < 0:
        raise ValueError("R must be >= 0")
    if r == 0:
        return []
    t = plan.matrix
    row_mass = t.sum(axis=1)
    if np.any(row_mass <= 0):
        raise DegeneratePlanError("transport-plan row with zero mass")
    scores = np.sum(t * c, axis=1) / row_mass
    order = np.argsort(scores, kind="stable")
    return [int(i) for i in order[: min(r, t.shape[0])]]


def barycentric_map(plan: TransportPlan, retrieved, points: np.ndarray) -> np.ndarray:
    """Per-row barycentric projection of the retrieved rows onto ``points``.

    Row i maps to sum_j T(i,j) * points[j] / sum_j T(i,j).
    """
    t = plan.matrix
    out = np.empty((len(retrieved), points.shape[1]))
    for pos, i in enumerate(retrieved):
        mass = t[i].sum()
        if mass <= 0:
            raise DegeneratePlanError(f"row {i} of transport plan has zero mass")
        out[pos] = (t[i] @ points) / mass
    return out


def barycentric_map_matrix(plan: TransportPlan, retrieved,
                           points: np.ndarray) -> np.ndarray:
    """Matrix form of the barycentric projection: diag(T 1)^-1 T P, sliced
    to the retrieved rows. Must agree with :func:`barycentric_map`."""
    t = plan.matrix
    row_mass = t.sum(axis=1)
    if np.any(row_mass <= 0):
        raise DegeneratePlanError("transport-plan row with zero mass")
    full = np.diag(1.0 / row_mass) @ t @ points
    return full[list(retrieved)]


@dataclass
class AugmentedClass:
    class_id: object
    retrieved_query_indices: list
    mapped_points: np.ndarray  # (K, d) supports transported toward retrieved queries
    prototype: np.ndarray  # (d,)


def _transported_supports(plan: TransportPlan, retrieved,
                          query_reps: np.ndarray) -> np.ndarray:
    """Each support point mapped to the barycenter of the retrieved queries
    under its (transposed, renormalized) transport-plan column."""
    t = plan.matrix[retrieved, :]  # (R, K)
    col_mass = t.sum(axis=0)
    if np.any(col_mass <= 0):
        raise DegeneratePlanError("support column carries no retrieved mass")
    weights = t / col_mass[None, :]  # (R, K), columns sum to 1
    return weights.T @ query_reps[retrieved]  # (K, d)


def estimate_prototype_weights(support_reps, query_reps: np.ndarray, r: int,
                               epsilon_scale: float = 0.05, epsilon: float = None,
                               tol: float = 1e-6, max_iter: int = 1000):
    """Prototype estimation that also exposes the frozen convex weights.

    Returns (prototypes (N, d), [AugmentedClass], [weights (R_c, K_c)])
    where weights[c][i, j] is the (column-normalized) share of retrieved
    query i in the transported support j. The trainer differentiates
    through these weights but never through the Sinkhorn solve.
    """
    support_reps = [np.atleast_2d(np.asarray(s, dtype=float)) for s in support_reps]
    if len(support_reps) < 2:
        raise ValueError("need at least 2 classes")
    query_reps = np.asarray(query_reps, dtype=float)
    m = 0 if query_reps.size == 0 else query_reps.shape[0]
    protos, augmented, weights_per_class = [], [], []
    for cid, sup in enumerate(support_reps):
        if r == 0 or m == 0:
            protos.append(sup.mean(axis=0))
            augmented.append(AugmentedClass(
                class_id=cid, retrieved_query_indices=[],
                mapped_points=np.empty((0, sup.shape[1])),
                prototype=protos[-1]))
            weights_per_class.append(np.empty((0, sup.shape[0])))
            continue
        c = cost_matrix(query_reps, sup)
        eps = epsilon if epsilon is not None else epsilon_scale * max(c.mean(), 1e-30)
        plan = sinkhorn(c, eps, tol=tol, max_iter=max_iter)
        retrieved = retrieve_top_r(plan, c, r)
        t = plan.matrix[retrieved, :]
        col_mass = t.sum(axis=0)
        if np.any(col_mass <= 0):
            raise DegeneratePlanError("support column carries no retrieved mass")
        w = t / col_mass[None, :]  # (R, K), columns sum to 1
        mapped = w.T @ query_reps[retrieved]
        proto = np.vstack([sup, mapped]).mean(axis=0)
        protos.append(proto)
        augmented.append(AugmentedClass(
            class_id=cid, retrieved_query_indices=retrieved,
            mapped_points=mapped, prototype=proto))
        weights_per_class.append(w)
    return np.array(protos), augmented, weights_per_class


def estimate_prototypes(support_reps, query_reps: np.ndarray, r: int,
                        epsilon_scale: float = 0.05, epsilon: float = None,
                        tol: float = 1e-6, max_iter: int = 1000):
    """Class prototypes from the union of supports and transported supports.

    ``support_reps`` is a sequence of (K_c, d) arrays, one per class;
    ``query_reps`` is (m, d). Per class the full query set is coupled to
    the class supports by Sinkhorn, the R cheapest-to-transport queries are
    retrieved, and each support is projected onto the barycenter of those
    queries; the prototype is the mean of the supports and their
    projections. With R=0 or an empty query set this degenerates to the
    plain support mean. ``epsilon`` overrides the cost-relative default
    ``epsilon_scale * mean(C)``.

    Returns (prototypes (N, d), [AugmentedClass per class]).
    """
    protos, augmented, _ = estimate_prototype_weights(
        support_reps, query_reps, r, epsilon_scale=epsilon_scale,
        epsilon=epsilon, tol=tol, max_iter=max_iter)
    return protos, augmented
