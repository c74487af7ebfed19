"""Hedge (exponential weights) over K experts.

All functions accept states with leading batch axes, so a population of
users can be advanced in one call: ``probs`` has shape ``(..., K)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class HedgeState:
    probs: np.ndarray
    eta: float
    cumulative_losses: np.ndarray

    @property
    def n_experts(self) -> int:
        return self.probs.shape[-1]


def default_eta(n_experts: int, horizon: int) -> float:
    """Learning rate sqrt(8 ln K / T) for a known horizon.

    K = 1 makes the rate zero; the single expert is then never reweighted, so
    any positive value is equivalent and 1.0 is returned.
    """
    if n_experts < 1 or horizon < 1:
        raise ValueError("n_experts and horizon must be >= 1")
    if n_experts == 1:
        return 1.0
    return math.sqrt(8.0 * math.log(n_experts) / horizon)


def init_uniform(n_experts: int, eta: float, batch_shape: tuple = ()) -> HedgeState:
    if n_experts < 1:
        raise ValueError("need at least one expert")
    if not eta > 0:
        raise ValueError("eta must be positive")
    shape = tuple(batch_shape) + (n_experts,)
    return HedgeState(
        probs=np.full(shape, 1.0 / n_experts),
        eta=float(eta),
        cumulative_losses=np.zeros(shape),
    )


def select_expert(state: HedgeState, rng: np.random.Generator, mode: str = "sample"):
    """Draw an expert index from ``state.probs`` (0-based).

    ``mode="argmax"`` picks the most probable expert instead, lowest index on
    ties. Returns an int for an unbatched state, an int array otherwise.
    """
    probs = state.probs
    if mode == "argmax":
        idx = np.argmax(probs, axis=-1)
    elif mode == "sample":
        u = rng.random(probs.shape[:-1])
        cdf = np.cumsum(probs, axis=-1)
        idx = np.minimum(np.sum(cdf <= u[..., None], axis=-1), probs.shape[-1] - 1)
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    if probs.ndim == 1:
        return int(idx)
    return idx


def update(state: HedgeState, losses) -> HedgeState:
    losses = np.asarray(losses, dtype=float)
    if losses.shape != state.probs.shape:
        raise ValueError(f"loss shape {losses.shape} does not match {state.probs.shape}")
    if np.any(losses < 0) or np.any(losses > 1) or not np.all(np.isfinite(losses)):
        raise ValueError("losses must lie in [0, 1]")
    w = state.probs * np.exp(-state.eta * losses)
    probs = w / np.sum(w, axis=-1, keepdims=True)
    return HedgeState(
        probs=probs,
        eta=state.eta,
        cumulative_losses=state.cumulative_losses + losses,
    )


def expected_loss(state: HedgeState, losses) -> np.ndarray:
    """<p, l> for the current weights."""
    return np.sum(state.probs * np.asarray(losses, dtype=float), axis=-1)
