"""Synthetic user populations.

Preference parameters are drawn from a Gaussian mixture over
``(b, s, orientation propensity)``; the orientation is the sign of the third
coordinate. Contexts are uniform on boxes and choices follow the prediction
rule, optionally flipped through a logistic noise model on the margin.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .core import Option, PreferenceParams, TravelContext, UserHistory, predict_array
from .errors import ConfigError, DataError

DEFAULT_TAU_RANGE = (1.0, 1.5)
DEFAULT_E_RANGE = (0.5, 1.0)

DATASET_COLUMNS = ("user_id", "split", "cluster_id", "b", "s", "o", "round", "tau", "e", "choice")

POPULATION_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["components"],
    "properties": {
        "components": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["weight", "mean"],
                "properties": {
                    "weight": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "mean": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                    "std": {"type": "number", "minimum": 0},
                    "cov": {
                        "type": "array",
                        "minItems": 3,
                        "maxItems": 3,
                        "items": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                    },
                },
                "additionalProperties": False,
            },
        },
        "context_ranges": {
            "type": "object",
            "properties": {
                "tau": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "e": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
            "additionalProperties": False,
        },
        "noise_temperature": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True, eq=False)
class PopulationSpec:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    tau_range: tuple = DEFAULT_TAU_RANGE
    e_range: tuple = DEFAULT_E_RANGE
    noise_temperature: float = 0.0

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.asarray(self.means, dtype=float).reshape(-1, 3)
        covs = np.asarray(self.covariances, dtype=float).reshape(-1, 3, 3)
        if not (len(weights) == len(means) == len(covs)) or len(weights) == 0:
            raise ConfigError("weights, means and covariances must describe the same components")
        if np.any(weights <= 0) or np.any(weights > 1) or abs(weights.sum() - 1.0) > 1e-9:
            raise ConfigError("component weights must lie in (0, 1] and sum to 1")
        for cov in covs:
            if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ConfigError("covariances must be symmetric positive semidefinite")
        for name, rng_ in (("tau", self.tau_range), ("e", self.e_range)):
            lo, hi = rng_
            if not (0 < lo <= hi):
                raise ConfigError(f"{name} range must satisfy 0 < lo <= hi, got {rng_}")
        if self.noise_temperature < 0:
            raise ConfigError("noise temperature must be nonnegative")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "tau_range", tuple(float(v) for v in self.tau_range))
        object.__setattr__(self, "e_range", tuple(float(v) for v in self.e_range))

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_params(self) -> list[PreferenceParams]:
        """Component means as decision boundaries (orientation = sign of the mean)."""
        return [PreferenceParams(b=m[0], s=m[1], o=1 if m[2] >= 0 else -1) for m in self.means]

    def with_temperature(self, temperature: float) -> "PopulationSpec":
        return PopulationSpec(self.weights, self.means, self.covariances, self.tau_range, self.e_range, temperature)

    def to_dict(self) -> dict:
        return {
            "components": [
                {"weight": float(w), "mean": m.tolist(), "cov": c.tolist()}
                for w, m, c in zip(self.weights, self.means, self.covariances)
            ],
            "context_ranges": {"tau": list(self.tau_range), "e": list(self.e_range)},
            "noise_temperature": float(self.noise_temperature),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PopulationSpec":
        try:
            jsonschema.validate(data, POPULATION_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid population spec: {exc.message}") from None
        comps = data["components"]
        covs = []
        for c in comps:
            if "cov" in c:
                covs.append(c["cov"])
            else:
                covs.append(np.eye(3) * c.get("std", 0.0) ** 2)
        ranges = data.get("context_ranges", {})
        return cls(
            weights=[c["weight"] for c in comps],
            means=[c["mean"] for c in comps],
            covariances=covs,
            tau_range=tuple(ranges.get("tau", DEFAULT_TAU_RANGE)),
            e_range=tuple(ranges.get("e", DEFAULT_E_RANGE)),
            noise_temperature=data.get("noise_temperature", 0.0),
        )

    @classmethod
    def load(cls, path) -> "PopulationSpec":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"population spec not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(data)


def isotropic(means, std: float, weights=None, **kwargs) -> PopulationSpec:
    means = np.asarray(means, dtype=float)
    k = len(means)
    weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    covs = np.repeat((std**2 * np.eye(3))[None], k, axis=0)
    return PopulationSpec(weights=weights, means=means, covariances=covs, **kwargs)


# six behaviourally distinct boundaries, all crossing the default context box
_SEPARATED_MEANS = [
    [1.25, 0.0, 1.0],
    [1.25, 0.0, -1.0],
    [0.5, 1.0, 1.0],
    [0.5, 1.0, -1.0],
    [0.0, 1.6, 1.0],
    [1.6, -0.4, -1.0],
]
# boundaries outside the box: users always pick route 1 / always route 2
_ALWAYS_STANDARD = [3.0, 0.0, 1.0]
_ALWAYS_ECO = [-2.0, 0.0, 1.0]
_CORNER_PIVOT = [1.45, 0.0, 1.0]


def separated_population(std: float = 0.02, temperature: float = 0.0) -> PopulationSpec:
    return isotropic(_SEPARATED_MEANS, std, noise_temperature=temperature)


def degenerate_population(std: float = 0.02, corner_std: float = 0.6, temperature: float = 0.0) -> PopulationSpec:
    """Six regular clusters plus users whose parameters barely matter.

    Two groups never vary their choice (boundaries outside the context box).
    A third pivots its boundary around a point near the high-tau, low-e corner
    with a widely spread slope: members rarely pick route 2, so very different
    (b, s) values produce nearly the same choices. Roughly a quarter of the
    training users end up with one-class histories.
    """
    means = _SEPARATED_MEANS + [_ALWAYS_STANDARD, _ALWAYS_ECO, _CORNER_PIVOT]
    iso = std**2 * np.eye(3)
    covs = [iso] * (len(means) - 1)
    # b = 1.45 - 0.55 s keeps the boundary through (tau=1.45, e=0.55)
    d = np.array([-0.55, 1.0, 0.0])
    d /= np.linalg.norm(d)
    covs.append(corner_std**2 * np.outer(d, d) + iso)
    weights = [0.55 / 6] * 6 + [0.15, 0.10, 0.20]
    weights[-1] = 1.0 - sum(weights[:-1])
    return PopulationSpec(weights=weights, means=means, covariances=covs, noise_temperature=temperature)


def default_population() -> PopulationSpec:
    return separated_population(std=0.05, temperature=0.05)


PRESETS = {
    "default": default_population,
    "separated": separated_population,
    "degenerate": degenerate_population,
}


def population_from_config(value) -> PopulationSpec:
    """Accept a preset name, a JSON file path or an inline dict."""
    if isinstance(value, PopulationSpec):
        return value
    if isinstance(value, dict):
        return PopulationSpec.from_dict(value)
    if isinstance(value, str):
        if value in PRESETS:
            return PRESETS[value]()
        return PopulationSpec.load(value)
    raise ConfigError(f"cannot interpret population {value!r}")


def _cov_factors(spec: PopulationSpec) -> np.ndarray:
    factors = []
    for cov in spec.covariances:
        vals, vecs = np.linalg.eigh(cov)
        factors.append(vecs * np.sqrt(np.clip(vals, 0.0, None)))
    return np.stack(factors)


def sample_population(spec: PopulationSpec, count: int, rng: np.random.Generator) -> list[tuple[PreferenceParams, int]]:
    theta, comp = sample_theta(spec, count, rng)
    return [(PreferenceParams.from_array(row), int(k)) for row, k in zip(theta, comp)]


def sample_theta(spec: PopulationSpec, count: int, rng: np.random.Generator, raw: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Array form of ``sample_population``: ``(count, 3)`` parameters and component ids.

    ``raw=True`` skips the sign mapping of the third coordinate and returns the
    Gaussian draws themselves.
    """
    comp = rng.choice(spec.n_components, size=count, p=spec.weights)
    z = rng.standard_normal((count, 3))
    theta = spec.means[comp] + np.einsum("nij,nj->ni", _cov_factors(spec)[comp], z)
    if not raw:
        theta[:, 2] = np.where(theta[:, 2] >= 0, 1.0, -1.0)
    return theta, comp


def sample_context(spec: PopulationSpec, rng: np.random.Generator) -> TravelContext:
    tau, e = sample_contexts(spec, rng, ())
    return TravelContext(float(tau), float(e))


def sample_contexts(spec: PopulationSpec, rng: np.random.Generator, shape) -> tuple[np.ndarray, np.ndarray]:
    tau = rng.uniform(spec.tau_range[0], spec.tau_range[1], size=shape)
    e = rng.uniform(spec.e_range[0], spec.e_range[1], size=shape)
    return tau, e


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def generate_choice(theta: PreferenceParams, ctx: TravelContext, temperature: float, rng: np.random.Generator) -> Option:
    choice = generate_choices(theta.as_array(), np.array([ctx.tau]), np.array([ctx.e]), temperature, rng)
    return Option(int(choice[0]))


def generate_choices(theta, tau, e, temperature: float, rng: np.random.Generator) -> np.ndarray:
    """Choices for contexts ``tau``/``e`` of shape ``(..., T)`` given ``theta`` ``(..., 3)``."""
    if temperature < 0:
        raise ValueError("temperature must be nonnegative")
    if temperature == 0:
        return predict_array(theta, tau, e)
    theta = np.asarray(theta, dtype=float)
    m = theta[..., 2:3] * (tau - theta[..., 1:2] * e - theta[..., 0:1])
    p_eco = _sigmoid(m / temperature)
    return np.where(rng.random(np.shape(p_eco)) < p_eco, 2, 1)


@dataclass(frozen=True, eq=False)
class SimulatedUser:
    user_id: int
    split: str
    cluster_id: int
    theta_true: PreferenceParams
    history: UserHistory


@dataclass(eq=False)
class SyntheticDataset:
    users: list[SimulatedUser]
    spec: PopulationSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def train(self) -> list[SimulatedUser]:
        return [u for u in self.users if u.split == "train"]

    @property
    def test(self) -> list[SimulatedUser]:
        return [u for u in self.users if u.split == "test"]

    def n_rounds(self) -> int:
        return sum(len(u.history) for u in self.users)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(DATASET_COLUMNS)
        for u in self.users:
            th = u.theta_true
            for t, (tau, e, y) in enumerate(zip(u.history.tau, u.history.e, u.history.choices), start=1):
                writer.writerow((u.user_id, u.split, u.cluster_id, repr(th.b), repr(th.s), th.o, t, repr(float(tau)), repr(float(e)), int(y)))
        return buf.getvalue()

    def save(self, path) -> None:
        from .report import atomic_write_text

        atomic_write_text(Path(path), self.to_csv())

    @classmethod
    def load(cls, path, spec: PopulationSpec | None = None) -> "SyntheticDataset":
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                return cls.from_rows(csv.DictReader(fh), spec=spec)
        except FileNotFoundError:
            raise DataError(f"dataset not found: {path}") from None

    @classmethod
    def from_rows(cls, rows, spec: PopulationSpec | None = None) -> "SyntheticDataset":
        grouped: dict[int, dict] = {}
        try:
            for row in rows:
                uid = int(row["user_id"])
                rec = grouped.get(uid)
                if rec is None:
                    rec = grouped[uid] = {
                        "split": row["split"],
                        "cluster_id": int(row["cluster_id"]),
                        "theta": PreferenceParams(float(row["b"]), float(row["s"]), int(row["o"])),
                        "rounds": [],
                    }
                rec["rounds"].append((int(row["round"]), float(row["tau"]), float(row["e"]), int(row["choice"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"malformed dataset row: {exc}") from None
        if not grouped:
            raise DataError("dataset has no rows")
        users = []
        for uid, rec in grouped.items():
            if rec["split"] not in ("train", "test"):
                raise DataError(f"user {uid}: unknown split {rec['split']!r}")
            rounds = sorted(rec["rounds"])
            try:
                history = UserHistory([r[1] for r in rounds], [r[2] for r in rounds], [r[3] for r in rounds])
            except ValueError as exc:
                raise DataError(f"user {uid}: {exc}") from None
            users.append(SimulatedUser(uid, rec["split"], rec["cluster_id"], rec["theta"], history))
        return cls(users=users, spec=spec)


def generate_dataset(spec: PopulationSpec, n_test: int, n_train: int, t_test: int, t_train: int, master_seed: int) -> SyntheticDataset:
    """Train users get ids ``0..n_train-1``, test users follow.

    Every user draws from its own generator spawned from ``master_seed``, so
    a user's data does not depend on how many others are generated.
    """
    if min(n_test, n_train, t_test, t_train) < 1:
        raise ConfigError("user and round counts must be >= 1")
    streams = np.random.SeedSequence(master_seed).spawn(n_train + n_test)
    factors = _cov_factors(spec)
    users = []
    for uid, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        split, horizon = ("train", t_train) if uid < n_train else ("test", t_test)
        k = int(rng.choice(spec.n_components, p=spec.weights))
        raw = spec.means[k] + factors[k] @ rng.standard_normal(3)
        theta = PreferenceParams(b=float(raw[0]), s=float(raw[1]), o=1 if raw[2] >= 0 else -1)
        tau, e = sample_contexts(spec, rng, horizon)
        choices = generate_choices(theta.as_array(), tau, e, spec.noise_temperature, rng)
        users.append(SimulatedUser(uid, split, k, theta, UserHistory(tau, e, choices)))
    meta = {"n_test": n_test, "n_train": n_train, "t_test": t_test, "t_train": t_train, "master_seed": master_seed}
    return SyntheticDataset(users=users, spec=spec, meta=meta)


def empirical_centroid_loss(dataset, centroids) -> float:
    """Average per-round loss of each test user's best centroid.

    ``dataset`` may be a ``SyntheticDataset`` (its test split is used) or a
    sequence of ``UserHistory``.
    """
    from .clustering import loss_guided_distances, stack_histories

    if isinstance(dataset, SyntheticDataset):
        histories = [u.history for u in dataset.test]
    else:
        histories = list(dataset)
    theta = centroids.theta if hasattr(centroids, "theta") else np.asarray(centroids, float).reshape(-1, 3)
    stacked = stack_histories(histories)
    dist = loss_guided_distances(stacked, theta)
    lengths = stacked[3].sum(axis=1)
    return float(np.mean(dist.min(axis=1) / lengths))


def within_cluster_variance(theta: np.ndarray, labels, means: np.ndarray) -> float:
    """Mean squared distance of points to their component mean."""
    theta = np.asarray(theta, dtype=float)
    return float(np.mean(np.sum((theta - means[np.asarray(labels)]) ** 2, axis=1)))


def check_separation(spec: PopulationSpec) -> float:
    """Smallest between-mean distance divided by the largest per-coordinate std."""
    d = np.sqrt(((spec.means[:, None] - spec.means[None]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    std = math.sqrt(max(np.diagonal(c).max() for c in spec.covariances))
    return float(d.min() / std) if std > 0 else math.inf
