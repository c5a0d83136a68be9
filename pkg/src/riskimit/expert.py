"""Risk-sensitive expert policies and expert trajectory datasets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .approximator import AdamState, Mlp, SoftmaxPolicy, adam_step, init_mlp, rollout_policy
from .environments import (
    ENUMERATION_LIMIT,
    Env,
    EnvError,
    TabularMdp,
    enumerate_trajectories,
    enumeration_size,
    sample_trajectories,
    substream,
    trajectory_losses,
    write_dataset,
)
from .imitation import DivergenceError, policy_step_weights, step_batch, step_log_probs, step_score
from .risk import LossBatch, RiskConfig, scaled_rho_lambda, summarize


@dataclass
class ExpertResult:
    policy: Mlp
    best_iter: int
    best_rho: float
    history: list


def evaluated_rho(net: Mlp, env: Env, cfg: RiskConfig, n_traj: int, seed: int, workers: int = 1) -> float:
    """Batch rho on a fixed evaluation stream, so checkpoints share random numbers."""
    trajs = sample_trajectories(env, rollout_policy(SoftmaxPolicy(net), env), n_traj, seed, key=(8,),
                                workers=workers)
    return scaled_rho_lambda(trajectory_losses(trajs), cfg)


def train_cvar_expert(env: Env, cfg: RiskConfig, iters: int, seed: int, batch_size: int = 100,
                      hidden=(32, 32), lr: float = 1e-2, entropy_weight: float = 0.0,
                      baseline: bool = True, workers: int = 1, eval_every: int = 10,
                      eval_trajectories: int = 200) -> ExpertResult:
    """REINFORCE with Adam on mean + lam * CVaR_alpha of the true environment loss.

    Every ``eval_every`` iterations (and after the last update) the current
    parameters are scored on ``eval_trajectories`` fresh rollouts; the best
    scored checkpoint is returned.
    """
    spec = env.spec
    net = init_mlp((spec.observation_dim, *hidden, spec.action_count),
                   ("tanh",) * len(hidden) + ("softmax",), substream(seed, 0))
    opt = AdamState(net.param_count, lr=lr)
    best = (np.inf, -1, net)
    history = []

    def consider(it, candidate):
        nonlocal best
        value = evaluated_rho(candidate, env, cfg, eval_trajectories, seed, workers)
        history[-1]["evaluated_rho"] = value
        if value < best[0]:
            best = (value, it, candidate)

    for it in range(iters):
        trajs = sample_trajectories(env, rollout_policy(SoftmaxPolicy(net), env), batch_size, seed,
                                    key=(3, it), workers=workers)
        losses = trajectory_losses(trajs)
        if not np.all(np.isfinite(losses)):
            raise DivergenceError("non-finite expert loss", {"iter": it})
        history.append(dict(summarize(losses, cfg), iter=it))
        if it % eval_every == 0:
            consider(it, net)
        steps = step_batch(trajs)
        neglogp = -step_log_probs(net, steps)
        weights = policy_step_weights(steps, losses, neglogp, cfg, entropy_weight, baseline)
        net = net.with_params(adam_step(opt, net.params, step_score(net, steps, weights), "descend"))
        if not np.all(np.isfinite(net.params)):
            raise DivergenceError("non-finite expert parameters", {"iter": it})
    value = evaluated_rho(net, env, cfg, eval_trajectories, seed, workers)
    if value < best[0]:
        best = (value, iters, net)
    return ExpertResult(best[2], best[1], best[0], history)


def deterministic_policies(mdp: TabularMdp):
    """Yield (action tuple, one-hot policy matrix) for every stationary deterministic policy."""
    eye = np.eye(mdp.action_count)
    for choice in itertools.product(range(mdp.action_count), repeat=mdp.state_count):
        yield choice, eye[list(choice)]


def exact_tabular_expert(mdp: TabularMdp, cfg: RiskConfig, limit: int = ENUMERATION_LIMIT):
    """Exhaustive search over deterministic stationary policies for the lowest exact mean + lam*CVaR.

    Returns ``(policy_matrix, value)``; ties go to the first policy in
    lexicographic action order.
    """
    n_policies = mdp.action_count**mdp.state_count
    if n_policies * enumeration_size(mdp) > limit:
        raise EnvError(f"exhaustive search over {n_policies} policies exceeds the guard {limit}")
    best_value, best_pi = np.inf, None
    for _, pi in deterministic_policies(mdp):
        enum = enumerate_trajectories(mdp, pi)
        value = scaled_rho_lambda_exact(enum, cfg)
        if value < best_value - 1e-12:
            best_value, best_pi = value, pi
    return best_pi, best_value


def scaled_rho_lambda_exact(enum, cfg: RiskConfig) -> float:
    return scaled_rho_lambda(LossBatch(enum.losses, enum.probabilities / enum.probabilities.sum()), cfg)


def generate_expert_dataset(policy: Mlp, env: Env, count: int, seed: int, path,
                            header: dict | None = None, workers: int = 1) -> Path:
    """Write ``count`` expert rollouts with a provenance header carrying the policy checksum."""
    if count < 1:
        raise ValueError("count must be >= 1")
    sampler = rollout_policy(SoftmaxPolicy(policy), env)
    trajs = sample_trajectories(env, sampler, count, seed, key=(4,), workers=workers)
    head = {"policy_checksum": policy.checksum(), "provenance": "expert"}
    head.update(header or {})
    return write_dataset(path, trajs, env.spec.name, seed, head)
