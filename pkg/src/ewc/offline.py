"""Offline phase: per-user linear separators from training histories.

Each user's (tau, e) points are labelled +1 (eco route) / -1 (standard route)
and a regularised hinge loss is minimised with Pegasos-style subgradient
steps. Users are fitted together as one batched array computation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import PreferenceParams, UserHistory

log = logging.getLogger(__name__)

FALLBACK_BIAS = 1e6
_W1_EPS = 1e-9


@dataclass(frozen=True)
class SeparatorFitConfig:
    """Solver settings.

    The step size follows the inverse-time schedule ``1 / (regularization * t)``.
    ``batch_size=None`` uses every round at each step (deterministic); a
    positive value samples that many rounds per step using ``seed``.
    """

    regularization: float = 1e-3
    iterations: int = 10_000
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.regularization > 0:
            raise ValueError("regularization must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def canonicalize(w1: float, w2: float, w0: float) -> PreferenceParams:
    """Map the hyperplane ``w1*tau + w2*e + w0 > 0 -> eco`` onto (b, s, o)."""
    if w1 == 0 and w2 == 0:
        raise ValueError("hyperplane has no tau or e component")
    if w1 == 0:
        w1 = _W1_EPS if w2 <= 0 else -_W1_EPS
    return PreferenceParams(b=float(-w0 / w1), s=float(-w2 / w1), o=1 if w1 > 0 else -1)


def fallback_params(choice: int) -> PreferenceParams:
    """Boundary far outside any realistic context that always predicts ``choice``."""
    bias = FALLBACK_BIAS if int(choice) == 1 else -FALLBACK_BIAS
    return PreferenceParams(b=bias, s=0.0, o=1, degenerate=True)


def fit_user_separator(history: UserHistory, config: SeparatorFitConfig = SeparatorFitConfig()) -> PreferenceParams:
    return fit_all_users([history], config)[0]


def fit_all_users(dataset, config: SeparatorFitConfig = SeparatorFitConfig()) -> list[PreferenceParams]:
    histories = list(dataset)
    if not histories:
        raise ValueError("dataset is empty")
    result: list[PreferenceParams | None] = [None] * len(histories)

    by_length: dict[int, list[int]] = {}
    for i, h in enumerate(histories):
        if h.is_one_class:
            result[i] = fallback_params(h.choices[0])
        else:
            by_length.setdefault(len(h), []).append(i)

    for length, idx in sorted(by_length.items()):
        tau = np.stack([histories[i].tau for i in idx])
        e = np.stack([histories[i].e for i in idx])
        y = np.where(np.stack([histories[i].choices for i in idx]) == 2, 1.0, -1.0)
        weights = _fit_batch(tau, e, y, config)
        for j, i in enumerate(idx):
            result[i] = canonicalize(*weights[j])

    n_degenerate = sum(p.degenerate for p in result)
    if n_degenerate:
        log.debug("%d of %d users are one-class, using fallback boundaries", n_degenerate, len(result))
    return result


def _fit_batch(tau: np.ndarray, e: np.ndarray, y: np.ndarray, config: SeparatorFitConfig) -> np.ndarray:
    """Fit ``n`` users with equal history length; returns raw ``(w1, w2, w0)`` rows."""
    n, T = y.shape
    # per-user standardisation keeps the subgradient steps well conditioned
    mu_tau, mu_e = tau.mean(axis=1), e.mean(axis=1)
    sd_tau = _safe_std(tau)
    sd_e = _safe_std(e)
    X = np.stack(
        [
            (tau - mu_tau[:, None]) / sd_tau[:, None],
            (e - mu_e[:, None]) / sd_e[:, None],
            np.ones_like(tau),
        ],
        axis=-1,
    )

    lam = config.regularization
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(config.seed)
    rows = np.arange(n)[:, None]
    yX = y[:, :, None] * X

    w = np.zeros((n, 3, 1))
    for t in range(1, config.iterations + 1):
        m = (yX @ w)[:, :, 0]
        if config.batch_size is None:
            grad = (m < 1.0)[:, None, :] @ yX / T
        else:
            pick = rng.integers(0, T, size=(n, config.batch_size))
            grad = (m[rows, pick] < 1.0)[:, None, :] @ yX[rows, pick] / config.batch_size
        w *= 1.0 - 1.0 / t
        w += np.swapaxes(grad, 1, 2) / (lam * t)
        norm = np.sqrt(np.sum(w[:, :, 0] ** 2, axis=1))
        over = norm > radius
        if np.any(over):
            w[over] *= (radius / norm[over])[:, None, None]

    w = w[:, :, 0]
    # undo the standardisation
    w1 = w[:, 0] / sd_tau
    w2 = w[:, 1] / sd_e
    w0 = w[:, 2] - w1 * mu_tau - w2 * mu_e
    return np.stack([w1, w2, w0], axis=1)


def _safe_std(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=1)
    return np.where(sd > 0, sd, 1.0)
