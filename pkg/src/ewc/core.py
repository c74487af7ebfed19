"""Domain types, the route prediction rule and 0/1 choice losses.

Route 1 is the standard route, route 2 the eco route. A context only stores
route 2's travel time and emissions relative to route 1; route 1's metrics
are implicitly ``[1, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class Option(IntEnum):
    STANDARD = 1
    ECO = 2


@dataclass(frozen=True)
class TravelContext:
    tau: float
    e: float

    def __post_init__(self):
        if not (self.tau > 0 and self.e > 0):
            raise ValueError(f"context ratios must be positive, got tau={self.tau}, e={self.e}")


@dataclass(frozen=True)
class PreferenceParams:
    """Linear decision boundary ``o * (tau - s*e - b) > 0  ->  eco route``.

    ``degenerate`` marks boundaries produced by the one-class fallback of the
    offline fit; it does not take part in equality.
    """

    b: float
    s: float
    o: int
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.o not in (-1, 1):
            raise ValueError(f"orientation must be -1 or +1, got {self.o}")
        if not (math.isfinite(self.b) and math.isfinite(self.s)):
            raise ValueError("bias and slope must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.b, self.s, float(self.o)])

    @classmethod
    def from_array(cls, row) -> "PreferenceParams":
        b, s, o = (float(v) for v in row)
        return cls(b=b, s=s, o=1 if o >= 0 else -1)


@dataclass(frozen=True, eq=False)
class UserHistory:
    """Aligned per-round contexts and observed choices of one user."""

    tau: np.ndarray
    e: np.ndarray
    choices: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        e = np.asarray(self.e, dtype=float)
        choices = np.asarray(self.choices, dtype=np.int64)
        if not (tau.ndim == e.ndim == choices.ndim == 1):
            raise ValueError("history arrays must be one-dimensional")
        if not (len(tau) == len(e) == len(choices)) or len(tau) == 0:
            raise ValueError("history arrays must have equal, nonzero length")
        if not np.all((choices == 1) | (choices == 2)):
            raise ValueError("choices must be 1 or 2")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "choices", choices)

    @classmethod
    def from_rounds(cls, contexts, choices) -> "UserHistory":
        contexts = list(contexts)
        return cls(
            tau=[c.tau for c in contexts],
            e=[c.e for c in contexts],
            choices=[int(y) for y in choices],
        )

    def __len__(self):
        return len(self.choices)

    def __eq__(self, other):
        if not isinstance(other, UserHistory):
            return NotImplemented
        return (
            np.array_equal(self.tau, other.tau)
            and np.array_equal(self.e, other.e)
            and np.array_equal(self.choices, other.choices)
        )

    def contexts(self) -> list[TravelContext]:
        return [TravelContext(float(t), float(e)) for t, e in zip(self.tau, self.e)]

    @property
    def is_one_class(self) -> bool:
        return bool(np.all(self.choices == self.choices[0]))


def margin(params: PreferenceParams, ctx: TravelContext) -> float:
    return params.o * (ctx.tau - params.s * ctx.e - params.b)


def predict_choice(params: PreferenceParams, ctx: TravelContext) -> Option:
    # strict inequality: a context exactly on the boundary gets route 1
    return Option.ECO if margin(params, ctx) > 0 else Option.STANDARD


def choice_loss(predicted: int, actual: int) -> int:
    return (int(predicted) - int(actual)) ** 2


def expert_loss_vector(centroids, ctx: TravelContext, actual: int) -> np.ndarray:
    """0/1 loss of every expert's prediction against the observed choice."""
    theta = _as_theta_matrix(centroids)
    preds = predict_array(theta, np.array([ctx.tau]), np.array([ctx.e]))[:, 0]
    return (preds != int(actual)).astype(float)


def predict_array(theta, tau, e) -> np.ndarray:
    """Vectorised prediction rule.

    ``theta`` has shape ``(..., 3)`` holding ``(b, s, o)`` rows and ``tau``/``e``
    have shape ``(..., T)`` (broadcast against the leading axes of ``theta``).
    Returns integer choices of shape ``(..., T)``.
    """
    theta = np.asarray(theta, dtype=float)
    b = theta[..., 0:1]
    s = theta[..., 1:2]
    o = theta[..., 2:3]
    m = o * (np.asarray(tau, dtype=float) - s * np.asarray(e, dtype=float) - b)
    return np.where(m > 0, 2, 1)


def _as_theta_matrix(centroids) -> np.ndarray:
    if hasattr(centroids, "theta"):
        return np.asarray(centroids.theta, dtype=float)
    if isinstance(centroids, PreferenceParams):
        return centroids.as_array()[None, :]
    rows = [c.as_array() if isinstance(c, PreferenceParams) else np.asarray(c, float) for c in centroids]
    return np.vstack(rows)
