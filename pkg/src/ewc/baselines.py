"""Comparison policies: FTL, hindsight FTL, disjoint LinUCB and the two oracles.

Tie-breaks always favour route 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Option, PreferenceParams, TravelContext, UserHistory, predict_choice

N_ARMS = 2
DIM = 2


@dataclass(frozen=True)
class FtlState:
    count_choice1: int = 0
    count_choice2: int = 0

    def __post_init__(self):
        if self.count_choice1 < 0 or self.count_choice2 < 0:
            raise ValueError("counts must be nonnegative")

    def observe(self, choice: int) -> "FtlState":
        if int(choice) == 1:
            return FtlState(self.count_choice1 + 1, self.count_choice2)
        return FtlState(self.count_choice1, self.count_choice2 + 1)


def ftl_recommend(state: FtlState) -> Option:
    return Option.ECO if state.count_choice2 > state.count_choice1 else Option.STANDARD


def ftl_predictions(choices: np.ndarray) -> np.ndarray:
    """FTL recommendations for every round of ``(N, T)`` choice sequences."""
    choices = np.asarray(choices)
    n2 = np.cumsum(choices == 2, axis=-1)
    n1 = np.cumsum(choices == 1, axis=-1)
    # counts seen before round t
    prev2 = np.concatenate([np.zeros_like(n2[..., :1]), n2[..., :-1]], axis=-1)
    prev1 = np.concatenate([np.zeros_like(n1[..., :1]), n1[..., :-1]], axis=-1)
    return np.where(prev2 > prev1, 2, 1)


def oracle_ftl_mistakes(history: UserHistory) -> float:
    """T * min(p, 1 - p), p the share of route-1 choices."""
    T = len(history)
    p = float(np.mean(history.choices == 1))
    return T * min(p, 1.0 - p)


def oracle_ftl_predictions(choices: np.ndarray) -> np.ndarray:
    """Hindsight majority choice repeated every round (ties -> route 1)."""
    choices = np.asarray(choices)
    n2 = np.sum(choices == 2, axis=-1, keepdims=True)
    n1 = np.sum(choices == 1, axis=-1, keepdims=True)
    return np.broadcast_to(np.where(n2 > n1, 2, 1), choices.shape).copy()


def default_alpha(horizon: int, n_arms: int = N_ARMS, delta: float = 0.1) -> float:
    """sqrt(0.5 * ln(2 T K / delta))."""
    return math.sqrt(0.5 * math.log(2.0 * horizon * n_arms / delta))


@dataclass(frozen=True, eq=False)
class LinUcbState:
    """Per-arm ridge statistics; ``A`` is ``(..., arms, d, d)``, ``b`` is ``(..., arms, d)``."""

    A: np.ndarray
    b: np.ndarray
    alpha: float


def linucb_init(alpha: float, batch_shape: tuple = ()) -> LinUcbState:
    shape = tuple(batch_shape)
    A = np.broadcast_to(np.eye(DIM), shape + (N_ARMS, DIM, DIM)).copy()
    b = np.zeros(shape + (N_ARMS, DIM))
    return LinUcbState(A=A, b=b, alpha=float(alpha))


def arm_features(tau, e) -> np.ndarray:
    """Feature vectors ``(..., arms, d)``: [1, 1] for route 1, [tau, e] for route 2."""
    tau = np.asarray(tau, dtype=float)
    e = np.asarray(e, dtype=float)
    x1 = np.stack([np.ones_like(tau), np.ones_like(e)], axis=-1)
    x2 = np.stack([tau, e], axis=-1)
    return np.stack([x1, x2], axis=-2)


def linucb_scores(state: LinUcbState, x: np.ndarray) -> np.ndarray:
    A_inv = np.linalg.inv(state.A)
    theta_hat = np.einsum("...ij,...j->...i", A_inv, state.b)
    mean = np.einsum("...i,...i->...", x, theta_hat)
    width = np.sqrt(np.einsum("...i,...ij,...j->...", x, A_inv, x))
    return mean + state.alpha * width


def linucb_choose(state: LinUcbState, tau, e) -> np.ndarray:
    """Arm (1 or 2) with the larger upper confidence bound; equal scores pick 1."""
    scores = linucb_scores(state, arm_features(tau, e))
    return np.where(scores[..., 1] > scores[..., 0], 2, 1)


def linucb_update(state: LinUcbState, tau, e, arm, choice) -> LinUcbState:
    """Rank-one update of the pulled arm only, reward 1 when it matched the choice."""
    x = arm_features(tau, e)
    arm = np.asarray(arm)
    reward = (arm == np.asarray(choice)).astype(float)
    sel = np.stack([arm == 1, arm == 2], axis=-1).astype(float)
    A = state.A + sel[..., None, None] * np.einsum("...i,...j->...ij", x, x)
    b = state.b + (sel * reward[..., None])[..., None] * x
    return LinUcbState(A=A, b=b, alpha=state.alpha)


def linucb_step(state: LinUcbState, ctx: TravelContext, choice: int, rng=None) -> tuple[Option, LinUcbState]:
    """One LinUCB round for a single user: recommend, then learn from ``choice``.

    ``rng`` is accepted for interface symmetry with the sampling policies;
    LinUCB itself is deterministic.
    """
    arm = int(linucb_choose(state, ctx.tau, ctx.e))
    return Option(arm), linucb_update(state, ctx.tau, ctx.e, arm, choice)


def oracle_cluster_recommend(true_cluster_mean, ctx: TravelContext) -> Option:
    mean = true_cluster_mean if isinstance(true_cluster_mean, PreferenceParams) else PreferenceParams.from_array(true_cluster_mean)
    return predict_choice(mean, ctx)


def oracle_theta_recommend(theta_true: PreferenceParams, ctx: TravelContext) -> Option:
    return predict_choice(theta_true, ctx)
