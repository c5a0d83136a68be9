"""Occupancy-dependent cost randomization.

Expert state-action pairs are clustered; the fraction of expert pairs in a
cluster is a crude occupancy estimate.  Costs in rarely visited clusters
are scaled by a heavier random gain, which makes the expert's behaviour
risk-averse with respect to the randomized cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .environments import Env, EnvSpec, encode_pairs, truncated_normal

CLUSTER_FORMAT_VERSION = 1
DEFAULT_K = 15
VARIANTS = ("hopper_style", "walker_style")


@dataclass(frozen=True, eq=False)
class ClusterModel:
    centroids: np.ndarray
    weights: np.ndarray
    observation_dim: int
    action_count: int

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != w.shape[0] or c.shape[1] != self.observation_dim + self.action_count:
            raise ValueError("centroid dimension must equal observation_dim + action_count")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("cluster weights must lie on the simplex")
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def encode(self, obs, action: int) -> np.ndarray:
        onehot = np.zeros(self.action_count)
        onehot[action] = 1.0
        return np.concatenate([np.asarray(obs, dtype=np.float64).ravel(), onehot])

    def nearest(self, point: np.ndarray) -> int:
        return int(np.argmin(np.sum((self.centroids - point) ** 2, axis=1)))

    def to_dict(self) -> dict:
        return {
            "format_version": CLUSTER_FORMAT_VERSION,
            "centroids": self.centroids.tolist(),
            "weights": self.weights.tolist(),
            "observation_dim": self.observation_dim,
            "action_count": self.action_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        if d.get("format_version") != CLUSTER_FORMAT_VERSION:
            raise ValueError(f"unsupported cluster model format {d.get('format_version')!r}")
        return cls(np.array(d["centroids"]), np.array(d["weights"]), d["observation_dim"], d["action_count"])

    def save(self, path, extra: dict | None = None) -> Path:
        path = Path(path)
        payload = self.to_dict()
        payload.update(extra or {})
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "ClusterModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else int(rng.choice(n, p=d2 / total))
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centers)


def lloyd(points: np.ndarray, centers: np.ndarray, max_iters: int = 300):
    """Lloyd iterations until assignments stop changing; empty clusters move to the farthest point."""
    centers = centers.copy()
    assign = None
    for _ in range(max_iters):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=centers.shape[0])
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2[np.arange(points.shape[0]), new]))
            centers[j] = points[far]
            new[far] = j
            d2[far] = np.sum((centers - points[far]) ** 2, axis=1)
            counts = np.bincount(new, minlength=centers.shape[0])
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(centers.shape[0]):
            centers[j] = points[assign == j].mean(axis=0)
    return centers, assign


def sse(points: np.ndarray, centers: np.ndarray) -> float:
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return float(np.min(d2, axis=1).sum())


def fit_kmeans(states, actions, action_count: int, k: int = DEFAULT_K,
               rng: np.random.Generator | None = None, max_iters: int = 300) -> ClusterModel:
    points = encode_pairs(states, actions, action_count)
    if points.shape[0] < k:
        raise ValueError(f"need at least k={k} pairs, got {points.shape[0]}")
    rng = np.random.default_rng(0) if rng is None else rng
    centers, assign = lloyd(points, kmeans_plusplus(points, k, rng), max_iters)
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    weights = counts / counts.sum()
    return ClusterModel(centers, weights, points.shape[1] - action_count, action_count)


def cost_multiplier(w: float, z: float, variant: str) -> float:
    if variant == "hopper_style":
        return abs(z) / (0.2 + np.sqrt(w))
    if variant == "walker_style":
        return 0.4 * abs(z) / np.sqrt(max(0.01, w - 0.02))
    raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def noisy_cost(model: ClusterModel, obs, action: int, base_cost: float, variant: str,
               rng: np.random.Generator) -> float:
    """Scale ``base_cost`` by |Z| times a gain decreasing in the nearest cluster's weight."""
    w = model.weights[model.nearest(model.encode(obs, action))]
    z = truncated_normal(rng, 10.0)
    return cost_multiplier(w, z, variant) * base_cost


@dataclass(frozen=True, eq=False)
class NoisyCostEnv(Env):
    """Wrap an environment so each step's cost passes through ``noisy_cost``."""

    base: Env
    model: ClusterModel
    variant: str = "hopper_style"

    @property
    def spec(self) -> EnvSpec:
        s = self.base.spec
        return EnvSpec(f"{s.name}+{self.variant}", s.observation_dim, s.action_count, s.horizon, s.gamma)

    @property
    def tabular_states(self):
        return self.base.tabular_states

    def initial_state(self, rng):
        return self.base.initial_state(rng)

    def observe(self, state):
        return self.base.observe(state)

    def step(self, state, action, rng):
        obs = self.base.observe(state)
        nxt, cost, done = self.base.step(state, action, rng)
        return nxt, noisy_cost(self.model, obs, action, cost, self.variant, rng), done
