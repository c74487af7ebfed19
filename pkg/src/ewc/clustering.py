"""K-Means over preference parameters (b, s, o).

Two variants share seeding, tie-breaking and empty-cluster handling:

* ``kmeans_loss_guided`` assigns each user to the centroid whose boundary
  mispredicts the fewest of that user's training choices;
* ``kmeans_l2`` is ordinary Lloyd iteration in parameter space.

Centroid updates are arithmetic means of the members' parameters, with the
orientation rounded back to +1/-1 (ties go to +1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import PreferenceParams, UserHistory, predict_array

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CentroidSet:
    """K experts, one ``(b, s, o)`` row each."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1, 3)
        if len(theta) < 1:
            raise ValueError("need at least one centroid")
        if not np.all(np.isin(theta[:, 2], (-1.0, 1.0))):
            raise ValueError("centroid orientations must be -1 or +1")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    def __len__(self):
        return len(self.theta)

    def __eq__(self, other):
        return isinstance(other, CentroidSet) and np.array_equal(self.theta, other.theta)

    def params(self) -> list[PreferenceParams]:
        return [PreferenceParams.from_array(row) for row in self.theta]

    @classmethod
    def from_params(cls, params) -> "CentroidSet":
        return cls(np.vstack([p.as_array() for p in params]))

    def to_dict(self) -> dict:
        return {"k": len(self), "centroids": [{"b": r[0], "s": r[1], "o": int(r[2])} for r in self.theta.tolist()]}

    @classmethod
    def from_dict(cls, data: dict) -> "CentroidSet":
        return cls([[c["b"], c["s"], c["o"]] for c in data["centroids"]])


def one_hot(labels, n_clusters: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((len(labels), n_clusters), dtype=np.int64)
    out[np.arange(len(labels)), labels] = 1
    return out


def orientation_sign(values) -> np.ndarray:
    return np.where(np.asarray(values, dtype=float) >= 0, 1.0, -1.0)


def loss_guided_distance(history: UserHistory, centroid) -> int:
    """Number of rounds where the centroid's prediction differs from the choice."""
    theta = centroid.as_array() if isinstance(centroid, PreferenceParams) else np.asarray(centroid, float)
    preds = predict_array(theta, history.tau, history.e)
    return int(np.sum(preds != history.choices))


def stack_histories(histories) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pad ragged histories into ``(N, T_max)`` arrays plus a validity mask."""
    histories = list(histories)
    t_max = max(len(h) for h in histories)
    n = len(histories)
    tau = np.ones((n, t_max))
    e = np.ones((n, t_max))
    y = np.ones((n, t_max), dtype=np.int64)
    mask = np.zeros((n, t_max), dtype=bool)
    for i, h in enumerate(histories):
        k = len(h)
        tau[i, :k], e[i, :k], y[i, :k], mask[i, :k] = h.tau, h.e, h.choices, True
    return tau, e, y, mask


def loss_guided_distances(stacked, theta: np.ndarray) -> np.ndarray:
    """Distance of every user to every centroid, shape ``(N, K)``."""
    tau, e, y, mask = stacked
    preds = predict_array(theta[None, :, :], tau[:, None, :], e[:, None, :])
    return np.sum((preds != y[:, None, :]) & mask[:, None, :], axis=2).astype(float)


def l2_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)


def kmeans_plus_plus(points: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, n_clusters):
        total = d2.sum()
        if total > 0 and np.isfinite(total):
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans_loss_guided(params, histories, n_clusters: int, seed: int = 0, max_iters: int = 100):
    """Cluster users by loss-guided distance.

    Returns ``(CentroidSet, labels)`` where ``labels[i]`` is user i's cluster.
    Stops once the nearest-centroid assignment repeats or after ``max_iters``
    passes.
    """
    theta, histories = _check_inputs(params, n_clusters, histories, max_iters)
    stacked = stack_histories(histories)
    rng = np.random.default_rng(seed)
    centers = kmeans_plus_plus(theta, n_clusters, rng)
    centers[:, 2] = orientation_sign(centers[:, 2])

    raw = labels = None
    for it in range(max_iters):
        dist = loss_guided_distances(stacked, centers)
        new_raw = np.argmin(dist, axis=1)
        if raw is not None and np.array_equal(new_raw, raw):
            log.debug("loss-guided k-means converged after %d passes", it)
            break
        raw = new_raw
        centers, labels = _mean_update(theta, raw, dist, n_clusters)
    # labels are the memberships the returned centroids were averaged over
    return CentroidSet(centers), labels


def kmeans_l2(params, n_clusters: int, seed: int = 0, max_iters: int = 100):
    """Standard Lloyd iterations in (b, s, o) space with k-means++ seeding."""
    theta, _ = _check_inputs(params, n_clusters, max_iters=max_iters)
    rng = np.random.default_rng(seed)
    centers = kmeans_plus_plus(theta, n_clusters, rng)

    raw = labels = None
    for it in range(max_iters):
        dist = l2_distances(theta, centers)
        new_raw = np.argmin(dist, axis=1)
        if raw is not None and np.array_equal(new_raw, raw):
            log.debug("L2 k-means converged after %d passes", it)
            break
        raw = new_raw
        centers, labels = _mean_update(theta, raw, dist, n_clusters, round_orientation=False)
    out = centers.copy()
    out[:, 2] = orientation_sign(out[:, 2])
    return CentroidSet(out), labels


def cluster_means(theta: np.ndarray, labels, n_clusters: int) -> np.ndarray:
    """Mean (b, s) and sign-rounded mean o per cluster; empty clusters give NaN rows."""
    labels = np.asarray(labels)
    out = np.full((n_clusters, 3), np.nan)
    for k in range(n_clusters):
        members = theta[labels == k]
        if len(members):
            out[k] = members.mean(axis=0)
            out[k, 2] = orientation_sign(out[k, 2])
    return out


def _mean_update(theta, labels, dist, n_clusters, round_orientation=True):
    labels = labels.copy()
    counts = np.bincount(labels, minlength=n_clusters)
    if np.any(counts == 0):
        # move the worst-fit users into empty clusters
        fit = dist[np.arange(len(labels)), labels].copy()
        for k in np.flatnonzero(counts == 0):
            movable = counts[labels] > 1
            candidates = np.where(movable, fit, -np.inf)
            i = int(np.argmax(candidates))
            counts[labels[i]] -= 1
            labels[i] = k
            counts[k] = 1
            fit[i] = -np.inf
    centers = np.vstack([theta[labels == k].mean(axis=0) for k in range(n_clusters)])
    if round_orientation:
        centers[:, 2] = orientation_sign(centers[:, 2])
    return centers, labels


def _check_inputs(params, n_clusters, histories=None, max_iters=1):
    theta = np.vstack([p.as_array() if isinstance(p, PreferenceParams) else np.asarray(p, float) for p in params])
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if n_clusters > len(theta):
        raise ValueError(f"cannot form {n_clusters} clusters from {len(theta)} users")
    if histories is not None:
        histories = list(histories)
        if len(histories) != len(theta):
            raise ValueError("params and histories must be aligned")
    return theta, histories
