"""Stochastic decision processes, rollouts and exact trajectory enumeration.

Every environment is an immutable description; stepping is a pure function
of ``(state, action, rng)``.  Costs are minimized throughout, so CartPole's
survival reward becomes a cost of -1 per step.
"""

from __future__ import annotations

import bisect
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

DATASET_FORMAT_VERSION = 1
ENUMERATION_LIMIT = 10**7
SIMPLEX_TOL = 1e-9


class EnvError(ValueError):
    """Domain errors: non-finite states, bad actions, invalid policies."""


@dataclass(frozen=True)
class EnvSpec:
    name: str
    observation_dim: int
    action_count: int
    horizon: int
    gamma: float

    def __post_init__(self):
        if self.horizon < 1:
            raise EnvError("horizon must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise EnvError("gamma must lie in [0, 1)")
        if self.observation_dim < 1 or self.action_count < 1:
            raise EnvError("observation_dim and action_count must be positive")


@dataclass
class Trajectory:
    """Fixed-horizon sample: T+1 observations, T actions, T costs.

    ``length`` counts the steps actually taken; steps past an early
    termination are padding with zero cost and are ignored by every
    per-step statistic.
    """

    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    gamma: float
    length: int = -1

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states.reshape(-1, 1)
        T = self.actions.shape[0]
        if self.states.shape[0] != T + 1 or self.costs.shape[0] != T:
            raise EnvError("need len(states) == len(actions) + 1 == len(costs) + 1")
        if self.length < 0:
            self.length = T

    @property
    def horizon(self) -> int:
        return int(self.actions.shape[0])

    def discounts(self) -> np.ndarray:
        return self.gamma ** np.arange(self.horizon)

    @property
    def loss(self) -> float:
        return float(np.dot(self.discounts(), self.costs))


def encode_pairs(states, actions, action_count: int) -> np.ndarray:
    """Concatenate observations with one-hot actions."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    onehot = np.zeros((actions.shape[0], action_count))
    onehot[np.arange(actions.shape[0]), actions] = 1.0
    return np.hstack([states.reshape(actions.shape[0], -1), onehot])


def trajectory_losses(trajs: Sequence[Trajectory]) -> np.ndarray:
    return np.array([tr.loss for tr in trajs])


class Env:
    """Interface shared by all environments."""

    spec: EnvSpec

    def initial_state(self, rng: np.random.Generator):
        raise NotImplementedError

    def step(self, state, action: int, rng: np.random.Generator):
        raise NotImplementedError

    def observe(self, state) -> np.ndarray:
        return np.asarray(state, dtype=np.float64)

    @property
    def tabular_states(self) -> int | None:
        """State count when observations are one-hot over a finite state set."""
        return None


# ---------------------------------------------------------------------------
# CartPole with a noisy left push
# ---------------------------------------------------------------------------

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
HALF_LENGTH = 0.5
FORCE_MAG = 10.0
TAU = 0.02
THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4


def cartpole_dynamics(state, force: float) -> np.ndarray:
    """One explicit-Euler step of the classic cart-pole under ``force``."""
    x, x_dot, theta, theta_dot = state
    total_mass = CART_MASS + POLE_MASS
    polemass_length = POLE_MASS * HALF_LENGTH
    costheta = math.cos(theta)
    sintheta = math.sin(theta)
    temp = (force + polemass_length * theta_dot**2 * sintheta) / total_mass
    thetaacc = (GRAVITY * sintheta - costheta * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * costheta**2 / total_mass)
    )
    xacc = temp - polemass_length * thetaacc * costheta / total_mass
    return np.array([
        x + TAU * x_dot,
        x_dot + TAU * xacc,
        theta + TAU * theta_dot,
        theta_dot + TAU * thetaacc,
    ])


def cartpole_force(action: int, rng: np.random.Generator) -> float:
    if action == 1:
        return FORCE_MAG
    if action != 0:
        raise EnvError(f"cartpole action must be 0 or 1, got {action}")
    if rng.random() < 0.8:
        return -FORCE_MAG
    k = int(rng.integers(0, 9))
    return -float(k) * FORCE_MAG


def cartpole_step(state, action: int, rng: np.random.Generator):
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (4,) or not np.all(np.isfinite(state)):
        raise EnvError(f"cartpole state must be a finite 4-vector, got {state!r}")
    nxt = cartpole_dynamics(state, cartpole_force(action, rng))
    done = bool(abs(nxt[0]) > X_LIMIT or abs(nxt[2]) > THETA_LIMIT)
    return nxt, -1.0, done


@dataclass(frozen=True)
class CartPole(Env):
    horizon: int = 200
    gamma: float = 0.99

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec("cartpole", 4, 2, self.horizon, self.gamma)

    def initial_state(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def step(self, state, action, rng):
        return cartpole_step(state, action, rng)


# ---------------------------------------------------------------------------
# Pendulum with five torques and a random torque gain
# ---------------------------------------------------------------------------

PENDULUM_TORQUES = (-2.0, -1.0, 0.0, 1.0, 2.0)
PENDULUM_G = 10.0
PENDULUM_M = 1.0
PENDULUM_L = 1.0
PENDULUM_DT = 0.05
PENDULUM_MAX_SPEED = 8.0


def truncated_normal(rng: np.random.Generator, bound: float) -> float:
    while True:
        z = rng.standard_normal()
        if -bound <= z <= bound:
            return float(z)


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


def pendulum_dynamics(state, torque: float):
    cos_th, sin_th, th_dot = state
    th = math.atan2(sin_th, cos_th)
    cost = angle_normalize(th) ** 2 + 0.1 * th_dot**2 + 0.001 * torque**2
    new_th_dot = th_dot + (
        3 * PENDULUM_G / (2 * PENDULUM_L) * math.sin(th)
        + 3.0 / (PENDULUM_M * PENDULUM_L**2) * torque
    ) * PENDULUM_DT
    new_th_dot = min(max(new_th_dot, -PENDULUM_MAX_SPEED), PENDULUM_MAX_SPEED)
    new_th = th + new_th_dot * PENDULUM_DT
    return np.array([math.cos(new_th), math.sin(new_th), new_th_dot]), cost


def pendulum_step(state, action: int, rng: np.random.Generator):
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (3,) or not np.all(np.isfinite(state)):
        raise EnvError(f"pendulum state must be a finite 3-vector, got {state!r}")
    if not 0 <= action < len(PENDULUM_TORQUES):
        raise EnvError(f"pendulum action must be in 0..4, got {action}")
    u = PENDULUM_TORQUES[action]
    if rng.random() < 0.2:
        u = u * (1.0 + abs(truncated_normal(rng, 3.0)))
    nxt, cost = pendulum_dynamics(state, u)
    return nxt, cost, False


@dataclass(frozen=True)
class Pendulum(Env):
    horizon: int = 200
    gamma: float = 0.99

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec("pendulum", 3, 5, self.horizon, self.gamma)

    def initial_state(self, rng):
        th = rng.uniform(-math.pi, math.pi)
        return np.array([math.cos(th), math.sin(th), rng.uniform(-1.0, 1.0)])

    def step(self, state, action, rng):
        return pendulum_step(state, action, rng)


# ---------------------------------------------------------------------------
# Tabular MDPs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TabularMdp(Env):
    """Finite MDP with optional finite-support random costs.

    Costs are stored as atoms: ``cost_values[s, a, k]`` occurs with
    probability ``cost_probs[s, a, k]``.  A deterministic cost matrix is the
    one-atom case.  Observations are one-hot state vectors.
    """

    transition: np.ndarray
    cost_values: np.ndarray
    cost_probs: np.ndarray
    initial: np.ndarray
    horizon: int
    gamma: float
    name: str = "tabular"

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=np.float64)
        cv = np.asarray(self.cost_values, dtype=np.float64)
        cp = np.asarray(self.cost_probs, dtype=np.float64)
        p0 = np.asarray(self.initial, dtype=np.float64)
        if cv.ndim == 2:
            cv = cv[:, :, None]
        if cp.ndim == 2:
            cp = cp[:, :, None]
        S, A = p.shape[0], p.shape[1]
        if p.shape != (S, A, S) or p0.shape != (S,) or cv.shape[:2] != (S, A) or cp.shape != cv.shape:
            raise EnvError("inconsistent tabular MDP shapes")
        for name, arr in (("transition", p), ("initial", p0), ("cost_probs", cp)):
            if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > 1e-12):
                raise EnvError(f"{name} rows must be probability vectors")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "cost_values", cv)
        object.__setattr__(self, "cost_probs", cp)
        object.__setattr__(self, "initial", p0)
        EnvSpec(self.name, S, A, self.horizon, self.gamma)
        # cumulative tables for fast scalar sampling
        object.__setattr__(self, "_cum_p", np.cumsum(p, axis=2).tolist())
        object.__setattr__(self, "_cum_c", np.cumsum(cp, axis=2).tolist())
        object.__setattr__(self, "_cum_p0", np.cumsum(p0).tolist())
        object.__setattr__(self, "_cost_list", cv.tolist())

    @classmethod
    def deterministic_cost(cls, transition, cost, initial, horizon, gamma, name="tabular"):
        cost = np.asarray(cost, dtype=np.float64)
        return cls(transition, cost[:, :, None], np.ones(cost.shape + (1,)), initial, horizon, gamma, name)

    @property
    def state_count(self) -> int:
        return self.transition.shape[0]

    @property
    def action_count(self) -> int:
        return self.transition.shape[1]

    @property
    def tabular_states(self) -> int:
        return self.state_count

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec(self.name, self.state_count, self.action_count, self.horizon, self.gamma)

    @property
    def expected_cost(self) -> np.ndarray:
        return np.sum(self.cost_values * self.cost_probs, axis=2)

    def observe(self, state) -> np.ndarray:
        obs = np.zeros(self.state_count)
        obs[int(state)] = 1.0
        return obs

    def initial_state(self, rng):
        return _bisect(self._cum_p0, rng.random())

    def step(self, state, action, rng):
        s = int(state)
        nxt = _bisect(self._cum_p[s][action], rng.random())
        k = _bisect(self._cum_c[s][action], rng.random())
        return nxt, self._cost_list[s][action][k], False


def _bisect(cum: list, u: float) -> int:
    return min(bisect.bisect_right(cum, u), len(cum) - 1)


def _draw(probs, u: float) -> int:
    """Inverse-CDF draw from a short probability vector."""
    acc = 0.0
    last = len(probs) - 1
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return last


def make_bandit(arms: Sequence[Sequence[tuple[float, float]]]) -> TabularMdp:
    """One-state, horizon-1 MDP whose arms are lists of (cost, probability) atoms."""
    A = len(arms)
    K = max(len(a) for a in arms)
    values = np.zeros((1, A, K))
    probs = np.zeros((1, A, K))
    for i, atoms in enumerate(arms):
        for k, (v, p) in enumerate(atoms):
            values[0, i, k] = v
            probs[0, i, k] = p
    return TabularMdp(np.ones((1, A, 1)), values, probs, np.ones(1), horizon=1, gamma=0.0, name="bandit")


def make_gridworld(horizon: int = 12, gamma: float = 0.95, slip: float = 0.1,
                   hazard_low: float = 0.2, hazard_cost: float = 10.0,
                   hazard_prob: float = 0.1) -> TabularMdp:
    """Two-route gridworld with a shortcut through a randomly costly corridor.

    Layout (5 columns x 3 rows), start at S, goal at G::

        . . . . .
        S h h h G
        . . . . .

    Cells marked ``h`` cost ``hazard_low`` per step but with probability
    ``hazard_prob`` cost ``hazard_cost`` instead.  Every other non-goal cell
    costs 1.  The goal is absorbing with zero cost.  Moves slip to a random
    other direction with probability ``slip``.
    """
    rows, cols = 3, 5
    S = rows * cols
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    A = len(moves)

    def idx(r, c):
        return r * cols + c

    start, goal = idx(1, 0), idx(1, 4)
    hazard = {idx(1, c) for c in (1, 2, 3)}
    p = np.zeros((S, A, S))
    values = np.zeros((S, A, 2))
    probs = np.zeros((S, A, 2))
    for r in range(rows):
        for c in range(cols):
            s = idx(r, c)
            for a in range(A):
                if s == goal:
                    p[s, a, s] = 1.0
                    probs[s, a, 0] = 1.0
                    continue
                for b, (dr, dc) in enumerate(moves):
                    w = 1.0 - slip if b == a else slip / (A - 1)
                    nr = min(max(r + dr, 0), rows - 1)
                    nc = min(max(c + dc, 0), cols - 1)
                    p[s, a, idx(nr, nc)] += w
                if s in hazard:
                    values[s, a] = (hazard_low, hazard_cost)
                    probs[s, a] = (1.0 - hazard_prob, hazard_prob)
                else:
                    values[s, a, 0] = 1.0
                    probs[s, a, 0] = 1.0
    p0 = np.zeros(S)
    p0[start] = 1.0
    return TabularMdp(p, values, probs, p0, horizon, gamma, name="gridworld")


# ---------------------------------------------------------------------------
# Policies and rollouts
# ---------------------------------------------------------------------------

Policy = Callable[[np.ndarray], np.ndarray]


def check_probs(probs, action_count: int) -> list:
    """Validate a policy output and return it as a list of floats."""
    values = np.asarray(probs, dtype=np.float64).ravel().tolist()
    if len(values) != action_count or min(values) < 0 or abs(math.fsum(values) - 1.0) > SIMPLEX_TOL:
        raise EnvError(f"policy output is not a probability vector over {action_count} actions: {probs!r}")
    return values


def rollout(env: Env, policy: Policy, horizon: int | None = None,
            rng: np.random.Generator | None = None) -> Trajectory:
    """Sample one trajectory; steps after termination are zero-cost padding."""
    spec = env.spec
    T = spec.horizon if horizon is None else horizon
    rng = np.random.default_rng() if rng is None else rng
    state = env.initial_state(rng)
    obs = env.observe(state)
    states = np.zeros((T + 1, spec.observation_dim))
    actions = np.zeros(T, dtype=np.int64)
    costs = np.zeros(T)
    states[0] = obs
    length = T
    for t in range(T):
        probs = check_probs(policy(obs), spec.action_count)
        a = _draw(probs, rng.random())
        state, cost, done = env.step(state, a, rng)
        obs = env.observe(state)
        actions[t] = a
        costs[t] = cost
        states[t + 1] = obs
        if done:
            length = t + 1
            states[t + 2:] = obs
            break
    return Trajectory(states, actions, costs, spec.gamma, length)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for a (master seed, key...) pair, independent of call order."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def sample_trajectories(env: Env, policy: Policy, n: int, seed: int,
                        key: Sequence[int] = (), workers: int = 1) -> list[Trajectory]:
    """``n`` rollouts, trajectory j drawn from the substream (seed, *key, j)."""

    def one(j):
        return rollout(env, policy, rng=substream(seed, *key, j))

    if workers <= 1:
        return [one(j) for j in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n)))


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------


def policy_matrix(mdp: TabularMdp, policy) -> np.ndarray:
    """(S, A) action probabilities from a matrix or an observation->probs callable."""
    if callable(policy):
        table = np.array([policy(mdp.observe(s)) for s in range(mdp.state_count)], dtype=np.float64)
        for row in table:
            check_probs(row, mdp.action_count)
    else:
        table = np.asarray(policy, dtype=np.float64)
        if table.shape != (mdp.state_count, mdp.action_count):
            raise EnvError("policy matrix has the wrong shape")
        for row in table:
            check_probs(row, mdp.action_count)
    return table


@dataclass
class TrajectoryEnumeration:
    """All positive-probability trajectories as parallel arrays."""

    mdp: TabularMdp
    state_index: np.ndarray
    actions: np.ndarray
    cost_atoms: np.ndarray
    probabilities: np.ndarray
    costs: np.ndarray = field(init=False)
    losses: np.ndarray = field(init=False)

    def __post_init__(self):
        T = self.actions.shape[1]
        self.costs = self.mdp.cost_values[self.state_index[:, :T], self.actions, self.cost_atoms]
        self.losses = self.costs @ (self.mdp.gamma ** np.arange(T))

    def __len__(self):
        return self.probabilities.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        eye = np.eye(self.mdp.state_count)
        return Trajectory(eye[self.state_index[i]], self.actions[i], self.costs[i], self.mdp.gamma)

    def __iter__(self) -> Iterator[tuple[Trajectory, float]]:
        for i in range(len(self)):
            yield self.trajectory(i), float(self.probabilities[i])


def enumeration_size(mdp: TabularMdp) -> int:
    S, A, K = mdp.state_count, mdp.action_count, mdp.cost_values.shape[2]
    return S * (S * A * K) ** mdp.horizon


def enumerate_trajectories(mdp: TabularMdp, policy, limit: int = ENUMERATION_LIMIT) -> TrajectoryEnumeration:
    """Every horizon-T trajectory (including cost-atom draws) with its exact probability."""
    if enumeration_size(mdp) > limit:
        raise EnvError(f"enumeration of {enumeration_size(mdp)} branches exceeds the guard {limit}")
    pi = policy_matrix(mdp, policy)
    states = np.flatnonzero(mdp.initial > 0).reshape(-1, 1)
    probs = mdp.initial[states[:, 0]]
    actions = np.zeros((states.shape[0], 0), dtype=np.int64)
    atoms = np.zeros((states.shape[0], 0), dtype=np.int64)
    for _ in range(mdp.horizon):
        s = states[:, -1]
        # branch weight over (action, atom, next state)
        w = (probs[:, None, None, None] * pi[s][:, :, None, None]
             * mdp.cost_probs[s][:, :, :, None] * mdp.transition[s][:, :, None, :])
        m, a, k, s2 = np.nonzero(w)
        probs = w[m, a, k, s2]
        states = np.column_stack([states[m], s2])
        actions = np.column_stack([actions[m], a])
        atoms = np.column_stack([atoms[m], k])
    return TrajectoryEnumeration(mdp, states, actions, atoms, probs)


def state_action_visits(mdp: TabularMdp, policy) -> np.ndarray:
    """P(s_t = s, a_t = a) for t < T by forward recursion, shape (T, S, A)."""
    pi = policy_matrix(mdp, policy)
    dist = mdp.initial.copy()
    out = np.zeros((mdp.horizon, mdp.state_count, mdp.action_count))
    for t in range(mdp.horizon):
        out[t] = dist[:, None] * pi
        dist = np.einsum("sa,sap->p", out[t], mdp.transition)
    return out


def occupancy_measure(mdp: TabularMdp, policy) -> np.ndarray:
    """sum_t gamma^t P(s_t = s, a_t = a) over the T decision steps."""
    visits = state_action_visits(mdp, policy)
    return np.einsum("t,tsa->sa", mdp.gamma ** np.arange(mdp.horizon), visits)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def trajectory_record(tr: Trajectory, env_name: str, seed) -> dict:
    return {
        "states": tr.states.tolist(),
        "actions": tr.actions.tolist(),
        "costs": tr.costs.tolist(),
        "gamma": tr.gamma,
        "length": tr.length,
        "env_name": env_name,
        "seed": seed,
    }


def write_dataset(path, trajs: Sequence[Trajectory], env_name: str, seed, header: dict | None = None) -> Path:
    path = Path(path)
    head = {"format_version": DATASET_FORMAT_VERSION, "kind": "trajectories",
            "env_name": env_name, "seed": seed, "count": len(trajs)}
    head.update(header or {})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for tr in trajs:
                fh.write(json.dumps(trajectory_record(tr, env_name, seed)) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc
    return path


def read_dataset(path) -> tuple[dict, list[Trajectory]]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    header = json.loads(lines[0])
    if header.get("format_version") != DATASET_FORMAT_VERSION:
        raise EnvError(f"{path}: unsupported dataset format {header.get('format_version')!r}")
    trajs = []
    for line in lines[1:]:
        rec = json.loads(line)
        trajs.append(Trajectory(rec["states"], rec["actions"], rec["costs"], rec["gamma"],
                                rec.get("length", len(rec["actions"]))))
    return header, trajs
