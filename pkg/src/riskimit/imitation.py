"""Adversarial imitation objectives, their gradient estimators and the training loop.

Four variants share one loop:

* ``gail``        JS discriminator, risk-neutral on both sides.
* ``rail``        JS discriminator, mean-CVaR on the agent, mean on the expert.
* ``js_rs_gail``  JS discriminator, mean-CVaR on both sides.
* ``w_rs_gail``   Wasserstein critic with clipped weights, mean-CVaR on both sides.

The discriminator maximizes ``(1 + lam) * (rho[agent surrogate] - rho[expert surrogate])``
and the policy minimizes ``-H(pi) + (1 + lam) * rho[agent surrogate]``,
where ``(1 + lam) * rho = mean + lam * CVaR``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .approximator import (
    AdamState,
    Mlp,
    SoftmaxPolicy,
    adam_step,
    backward,
    clip_weights,
    forward,
    forward_logits,
    init_mlp,
    jvp_logits,
    per_sample_gradients,
    rollout_policy,
)
from .environments import (
    Env,
    Trajectory,
    encode_pairs,
    sample_trajectories,
    substream,
    trajectory_losses,
)
from .risk import RiskConfig, scaled_rho_lambda, summarize, tail_density, var_alpha

log = logging.getLogger(__name__)

VARIANTS = ("gail", "rail", "js_rs_gail", "w_rs_gail")
JS_CLAMP = 1e-7


class DivergenceError(RuntimeError):
    """Non-finite losses or parameters; ``record`` holds the diagnostic state."""

    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class KlStepConfig:
    max_kl: float = 0.01
    cg_iters: int = 10
    backtrack: float = 0.5
    max_backtracks: int = 10
    damping: float = 0.1


@dataclass(frozen=True)
class ImitationAlgo:
    variant: str = "js_rs_gail"
    risk: RiskConfig = field(default_factory=RiskConfig)
    entropy_weight: float = 1e-3
    policy_optimizer: str = "reinforce_adam"
    generator_steps: int | None = None
    discriminator_steps: int = 1
    pretrain_iters: int = 0
    batch_size: int = 100
    policy_hidden: tuple | None = None
    disc_hidden: tuple | None = None
    policy_lr: float = 1e-3
    disc_lr: float = 1e-3
    clip_bound: float = 0.05
    baseline: bool = True
    tail_rule: str = "dual"
    kl: KlStepConfig = field(default_factory=KlStepConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.policy_optimizer not in ("reinforce_adam", "kl_constrained"):
            raise ValueError(f"unknown policy optimizer {self.policy_optimizer!r}")
        if self.entropy_weight < 0 or self.discriminator_steps < 1 or self.pretrain_iters < 0:
            raise ValueError("entropy_weight, discriminator_steps and pretrain_iters out of range")

    @property
    def head(self) -> str:
        return "wasserstein" if self.variant == "w_rs_gail" else "js"

    @property
    def gen_steps(self) -> int:
        if self.generator_steps is not None:
            return self.generator_steps
        return 3 if self.variant == "gail" else 1

    @property
    def hidden(self) -> tuple:
        return (64, 64, 32) if self.head == "wasserstein" else (32, 32)

    def effective_risk(self, pretraining: bool = False) -> RiskConfig:
        if self.variant == "gail" or pretraining:
            return replace(self.risk, lam=0.0)
        return self.risk


# ---------------------------------------------------------------------------
# Flattened per-step view of a trajectory batch
# ---------------------------------------------------------------------------


def unique_rows(X: np.ndarray):
    """(distinct rows, index of each input row, multiplicities)."""
    uniq, inv, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    return uniq, inv.ravel(), counts.astype(np.float64)


@dataclass
class StepBatch:
    """Real (non-padding) steps of a batch, flattened.

    Repeated observations are common on tabular tasks, so network passes run
    over the distinct rows only.
    """

    obs: np.ndarray
    actions: np.ndarray
    traj: np.ndarray
    t: np.ndarray
    discount: np.ndarray
    n_traj: int

    @cached_property
    def distinct_obs(self):
        return unique_rows(self.obs)

    def pairs(self, action_count: int):
        key = ("pairs", action_count)
        cache = self.__dict__.setdefault("_pair_cache", {})
        if key not in cache:
            cache[key] = unique_rows(encode_pairs(self.obs, self.actions, action_count))
        return cache[key]


def step_log_probs(net: Mlp, steps: StepBatch) -> np.ndarray:
    """log pi(a_i | s_i) for every step."""
    uobs, inv, _ = steps.distinct_obs
    z = forward_logits(net, uobs)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return logp[inv, steps.actions]


def step_score(net: Mlp, steps: StepBatch, weights: np.ndarray) -> np.ndarray:
    """sum_i weights[i] * grad_theta log pi(a_i | s_i)."""
    uobs, inv, _ = steps.distinct_obs
    probs = forward(net, uobs)
    A = probs.shape[1]
    cot = np.zeros((uobs.shape[0], A))
    np.add.at(cot, (inv, steps.actions), weights)
    cot -= np.bincount(inv, weights=weights, minlength=uobs.shape[0])[:, None] * probs
    return backward(net, uobs, cot, through_output=False)


def step_batch(trajs: Sequence[Trajectory]) -> StepBatch:
    obs, acts, idx, ts = [], [], [], []
    for j, tr in enumerate(trajs):
        L = tr.length
        obs.append(tr.states[:L])
        acts.append(tr.actions[:L])
        idx.append(np.full(L, j))
        ts.append(np.arange(L))
    t = np.concatenate(ts)
    gamma = trajs[0].gamma
    return StepBatch(np.concatenate(obs), np.concatenate(acts), np.concatenate(idx), t,
                     gamma ** t.astype(np.float64), len(trajs))


def _segment_sum(values: np.ndarray, segments: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, segments, values)
    return out


# ---------------------------------------------------------------------------
# Discriminator surrogates and gradients
# ---------------------------------------------------------------------------


@dataclass
class SurrogateLosses:
    """Per-trajectory surrogate losses and their parameter-gradient rows.

    js head: ``F1 = sum_t g^t log f`` and ``F2 = sum_t g^t log(1 - f)``.
    wasserstein head: ``Cf = sum_t g^t f``.
    Gradient rows are only materialized on request; ``weighted_grad`` works
    either way.
    """

    head: str
    F1: np.ndarray | None = None
    F2: np.ndarray | None = None
    Cf: np.ndarray | None = None
    grad_F1: np.ndarray | None = None
    grad_F2: np.ndarray | None = None
    grad_Cf: np.ndarray | None = None
    pullback: Callable[[str, np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def weighted_grad(self, which: str, traj_weights: np.ndarray) -> np.ndarray:
        """sum_j traj_weights[j] * grad_w L_j for L in {F1, F2, Cf}."""
        rows = getattr(self, f"grad_{which}")
        if rows is not None:
            return traj_weights @ rows
        return self.pullback(which, traj_weights)


def surrogate_losses(disc: Mlp, trajs: Sequence[Trajectory], head: str, action_count: int,
                     with_grads: bool = True, steps: StepBatch | None = None) -> SurrogateLosses:
    """Discounted surrogate losses of each trajectory under the discriminator.

    On the js head f is clamped to [1e-7, 1 - 1e-7] before the logarithm; a
    clamped step contributes no gradient.
    """
    steps = step_batch(trajs) if steps is None else steps
    X, inv, _ = steps.pairs(action_count)
    f = forward(disc, X)[:, 0][inv]
    n = steps.n_traj
    if head == "wasserstein":
        out = SurrogateLosses(head, Cf=_segment_sum(steps.discount * f, steps.traj, n))
        coefs = {"Cf": steps.discount}
    elif head == "js":
        fc = np.clip(f, JS_CLAMP, 1.0 - JS_CLAMP)
        inside = (f == fc).astype(np.float64)
        out = SurrogateLosses(
            head,
            F1=_segment_sum(steps.discount * np.log(fc), steps.traj, n),
            F2=_segment_sum(steps.discount * np.log1p(-fc), steps.traj, n),
        )
        coefs = {"F1": steps.discount * inside / fc, "F2": -steps.discount * inside / (1.0 - fc)}
    else:
        raise ValueError(f"unknown head {head!r}")

    def pullback(which, traj_weights):
        cot = np.asarray(traj_weights)[steps.traj] * coefs[which]
        return backward(disc, X, np.bincount(inv, weights=cot, minlength=X.shape[0])[:, None])

    out.pullback = pullback
    if with_grads:
        rows = per_sample_gradients(disc, X, np.ones((X.shape[0], 1)))[inv]
        for which, c in coefs.items():
            setattr(out, f"grad_{which}", _segment_sum(c[:, None] * rows, steps.traj, n))
    return out


def risk_weights(losses: np.ndarray, cfg: RiskConfig, tail_rule: str = "dual") -> np.ndarray:
    """Per-trajectory weights c_j with grad(mean + lam * CVaR) = sum_j c_j grad L_j.

    c_j = (1 + lam * zeta_j) / N with zeta the CVaR density of the batch.
    For ``tail_rule='indicator'`` this is (alpha + lam * 1{L_j >= VaR}) / (alpha N).
    """
    n = losses.shape[0]
    if cfg.lam == 0.0:
        return np.full(n, 1.0 / n)
    if n < math.ceil(1.0 / cfg.alpha):
        log.warning("batch of %d trajectories cannot resolve an alpha=%g tail", n, cfg.alpha)
    if tail_rule == "indicator":
        nu = var_alpha(losses, cfg.alpha)
        return (cfg.alpha + cfg.lam * (losses >= nu)) / (cfg.alpha * n)
    return (1.0 + cfg.lam * tail_density(losses, cfg.alpha, tail_rule)) / n


def discriminator_gradient_js(agent: SurrogateLosses, expert: SurrogateLosses, cfg: RiskConfig,
                              rail: bool = False, tail_rule: str = "dual") -> np.ndarray:
    """Ascent direction of (1+lam)(rho[F1 agent] - rho[-F2 expert]) in the discriminator parameters.

    With ``rail=True`` the expert term is risk-neutral: (1+lam)(rho[F1] - E[-F2]).
    """
    g = agent.weighted_grad("F1", risk_weights(agent.F1, cfg, tail_rule))
    n_e = expert.F2.shape[0]
    if rail:
        w_e = np.full(n_e, (1.0 + cfg.lam) / n_e)
    else:
        w_e = risk_weights(-expert.F2, cfg, tail_rule)
    return g + expert.weighted_grad("F2", w_e)


def discriminator_gradient_w(agent: SurrogateLosses, expert: SurrogateLosses, cfg: RiskConfig,
                             tail_rule: str = "dual") -> np.ndarray:
    """Ascent direction of (1+lam)(rho[Cf agent] - rho[Cf expert])."""
    return (agent.weighted_grad("Cf", risk_weights(agent.Cf, cfg, tail_rule))
            - expert.weighted_grad("Cf", risk_weights(expert.Cf, cfg, tail_rule)))


def discriminator_objective(agent: SurrogateLosses, expert: SurrogateLosses, cfg: RiskConfig,
                            rail: bool = False) -> float:
    if agent.head == "wasserstein":
        return scaled_rho_lambda(agent.Cf, cfg) - scaled_rho_lambda(expert.Cf, cfg)
    expert_term = (1.0 + cfg.lam) * float(np.mean(-expert.F2)) if rail else scaled_rho_lambda(-expert.F2, cfg)
    return scaled_rho_lambda(agent.F1, cfg) - expert_term


# ---------------------------------------------------------------------------
# Policy gradients
# ---------------------------------------------------------------------------


def trajectory_scores(trajs: Sequence[Trajectory], policy: SoftmaxPolicy) -> np.ndarray:
    """Row j is grad_theta log pi(tau_j) = sum_t grad_theta log pi(a_t | s_t)."""
    steps = step_batch(trajs)
    rows = policy.score_rows(steps.obs, steps.actions)
    return _segment_sum(rows, steps.traj, steps.n_traj)


def policy_gradient_mean(losses: np.ndarray, logprob_grads: np.ndarray, baseline: float = 0.0) -> np.ndarray:
    """REINFORCE estimate of grad E[L]: mean of (L_j - b) grad log pi(tau_j)."""
    return (losses - baseline) @ logprob_grads / losses.shape[0]


def policy_gradient_cvar(losses: np.ndarray, logprob_grads: np.ndarray, alpha: float) -> np.ndarray:
    """Estimate of grad CVaR_alpha: mean of (L_j - VaR)_+ grad log pi(tau_j) / alpha."""
    losses = np.asarray(losses, dtype=np.float64)
    nu = var_alpha(losses, alpha)
    excess = np.maximum(losses - nu, 0.0)
    if not np.any(excess > 0):
        log.warning("no loss exceeds the estimated VaR; CVaR gradient term is zero")
    return excess @ logprob_grads / (alpha * losses.shape[0])


def _log_q(steps: StepBatch, neglogp: np.ndarray) -> np.ndarray:
    """sum_{k >= t} gamma^k (-log pi(a_k | s_k)) within each trajectory."""
    T = int(steps.t.max()) + 1 if steps.t.size else 0
    dense = np.zeros((steps.n_traj, T))
    dense[steps.traj, steps.t] = steps.discount * neglogp
    tail = np.cumsum(dense[:, ::-1], axis=1)[:, ::-1]
    return tail[steps.traj, steps.t]


def causal_entropy(trajs: Sequence[Trajectory], policy: SoftmaxPolicy) -> float:
    steps = step_batch(trajs)
    neglogp = -policy.log_probs(steps.obs, steps.actions)
    return float(np.sum(steps.discount * neglogp) / steps.n_traj)


def entropy_gradient(trajs: Sequence[Trajectory], policy: SoftmaxPolicy) -> np.ndarray:
    """Score-function estimate of grad H(pi): mean over trajectories of sum_t grad log pi_t * Q_log_t."""
    steps = step_batch(trajs)
    neglogp = -policy.log_probs(steps.obs, steps.actions)
    rows = policy.score_rows(steps.obs, steps.actions)
    return _log_q(steps, neglogp) @ rows / steps.n_traj


def policy_step_weights(steps: StepBatch, losses: np.ndarray, neglogp: np.ndarray, cfg: RiskConfig,
                        entropy_weight: float, baseline: bool = True) -> np.ndarray:
    """Per-step weights A_i with grad(-w_H H + mean + lam CVaR) = sum_i A_i grad log pi(a_i | s_i)."""
    n = steps.n_traj
    b = float(np.mean(losses)) if baseline else 0.0
    per_traj = (losses - b) / n
    if cfg.lam > 0.0:
        nu = var_alpha(losses, cfg.alpha)
        per_traj = per_traj + cfg.lam * np.maximum(losses - nu, 0.0) / (cfg.alpha * n)
    A = per_traj[steps.traj]
    if entropy_weight > 0.0:
        A = A - entropy_weight * _log_q(steps, neglogp) / n
    return A


# ---------------------------------------------------------------------------
# KL-constrained step
# ---------------------------------------------------------------------------


def conjugate_gradient(fvp: Callable[[np.ndarray], np.ndarray], b: np.ndarray, iters: int,
                       tol: float = 1e-20) -> np.ndarray:
    """Solve F x = b; stops once |r|^2 <= tol * |b|^2."""
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = r @ r
    stop = tol * rr
    for _ in range(iters):
        if rr <= stop:
            break
        Ap = fvp(p)
        step = rr / (p @ Ap)
        x += step * p
        r -= step * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def fisher_vector_product(net: Mlp, obs: np.ndarray, damping: float) -> Callable[[np.ndarray], np.ndarray]:
    """v -> (mean_s J_s^T (diag pi_s - pi_s pi_s^T) J_s + damping I) v over visited states."""
    uobs, _, counts = unique_rows(obs)
    probs = forward(net, uobs)
    n = obs.shape[0]

    def fvp(v):
        jv = jvp_logits(net, uobs, v)
        u = probs * jv - probs * np.sum(probs * jv, axis=1, keepdims=True)
        return backward(net, uobs, counts[:, None] * u, through_output=False) / n + damping * v

    return fvp


def natural_step(gradient: np.ndarray, fvp, max_kl: float, cg_iters: int) -> np.ndarray:
    """sqrt(2 max_kl / d'Fd) * d with d = F^{-1} g; a plain scaled gradient if CG breaks down."""
    d = conjugate_gradient(fvp, gradient, cg_iters)
    dFd = float(d @ fvp(d)) if np.all(np.isfinite(d)) else float("nan")
    if not np.isfinite(dFd) or dFd <= 0.0:
        log.warning("conjugate gradient failed; falling back to a scaled gradient step")
        d = gradient
        dFd = float(d @ fvp(d))
        if not np.isfinite(dFd) or dFd <= 0.0:
            dFd = float(d @ d)
    return math.sqrt(2.0 * max_kl / dFd) * d


def mean_kl(p_old: np.ndarray, p_new: np.ndarray, counts: np.ndarray | None = None) -> float:
    """Average KL(p_old || p_new) over rows, optionally with row multiplicities."""
    p_old = np.clip(p_old, 1e-300, None)
    p_new = np.clip(p_new, 1e-300, None)
    kl = np.sum(p_old * (np.log(p_old) - np.log(p_new)), axis=1)
    if counts is None:
        return float(np.mean(kl))
    return float(counts @ kl / counts.sum())


@dataclass
class KlStepInfo:
    accepted: bool
    kl: float
    step_fraction: float


def kl_constrained_step(net: Mlp, objective_gradient: np.ndarray, obs: np.ndarray, cfg: KlStepConfig,
                        surrogate: Callable[[np.ndarray], float] | None = None,
                        fvp=None) -> tuple[Mlp, KlStepInfo]:
    """Descend along the natural gradient within an empirical KL budget.

    Backtracks from the full trust-region step until the mean KL over the
    visited observations is within ``max_kl`` and, if given, the surrogate
    objective decreases.  Leaves the policy unchanged when no step passes.
    """
    g = np.asarray(objective_gradient, dtype=np.float64)
    if not np.any(g):
        return net, KlStepInfo(False, 0.0, 0.0)
    fvp = fisher_vector_product(net, obs, cfg.damping) if fvp is None else fvp
    full = -natural_step(g, fvp, cfg.max_kl, cfg.cg_iters)
    uobs, _, counts = unique_rows(obs)
    p_old = forward(net, uobs)
    base = surrogate(net.params) if surrogate is not None else None
    frac = 1.0
    for _ in range(cfg.max_backtracks):
        cand = net.params + frac * full
        kl = mean_kl(p_old, forward(net.with_params(cand), uobs), counts)
        better = surrogate is None or surrogate(cand) < base
        if np.isfinite(kl) and kl <= cfg.max_kl and better:
            return net.with_params(cand), KlStepInfo(True, kl, frac)
        frac *= cfg.backtrack
    return net, KlStepInfo(False, 0.0, 0.0)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainingResult:
    records: list
    policy: Mlp
    discriminator: Mlp
    param_history: list = field(default_factory=list)
    disc_updates: int = 0
    policy_updates: int = 0


def init_networks(algo: ImitationAlgo, obs_dim: int, action_count: int, seed: int) -> tuple[Mlp, Mlp]:
    p_hidden = tuple(algo.policy_hidden or algo.hidden)
    d_hidden = tuple(algo.disc_hidden or algo.hidden)
    policy = init_mlp((obs_dim, *p_hidden, action_count),
                      ("tanh",) * len(p_hidden) + ("softmax",), substream(seed, 0))
    out_act = "identity" if algo.head == "wasserstein" else "sigmoid"
    disc = init_mlp((obs_dim + action_count, *d_hidden, 1),
                    ("tanh",) * len(d_hidden) + (out_act,), substream(seed, 1))
    if algo.head == "wasserstein":
        disc = clip_weights(disc, algo.clip_bound)
    return policy, disc


def _guard(name: str, values, record: dict):
    if not np.all(np.isfinite(values)):
        raise DivergenceError(f"non-finite {name}", dict(record, failed=name))


def train(algo: ImitationAlgo, env: Env, expert_data: Sequence[Trajectory], seed: int, iterations: int,
          workers: int = 1, record_params: bool = False,
          on_record: Callable[[dict], None] | None = None,
          policy: Mlp | None = None, discriminator: Mlp | None = None) -> TrainingResult:
    """Alternate discriminator ascent and policy descent for ``pretrain_iters + iterations`` rounds."""
    if not expert_data:
        raise ValueError("expert dataset is empty")
    spec = env.spec
    A = spec.action_count
    init_pol, init_disc = init_networks(algo, spec.observation_dim, A, seed)
    pol_net = policy or init_pol
    disc = discriminator or init_disc
    disc_opt = AdamState(disc.param_count, lr=algo.disc_lr)
    pol_opt = AdamState(pol_net.param_count, lr=algo.policy_lr)
    expert_steps = step_batch(expert_data)
    head = algo.head
    rail = algo.variant == "rail"
    result = TrainingResult([], pol_net, disc)
    total = algo.pretrain_iters + iterations

    for it in range(total):
        pretraining = it < algo.pretrain_iters
        cfg = algo.effective_risk(pretraining)
        pol = SoftmaxPolicy(pol_net)
        sampler = rollout_policy(pol, env)
        trajs = sample_trajectories(env, sampler, algo.batch_size, seed, key=(2, it), workers=workers)
        steps = step_batch(trajs)
        true_losses = trajectory_losses(trajs)
        record = {"iter": it, "phase": "pretrain" if pretraining else "train"}
        record.update(summarize(true_losses, algo.risk))
        _guard("environment loss", true_losses, record)

        disc_obj = None
        for _ in range(algo.discriminator_steps):
            ag = surrogate_losses(disc, trajs, head, A, with_grads=False, steps=steps)
            ex = surrogate_losses(disc, expert_data, head, A, with_grads=False, steps=expert_steps)
            for name, s in (("agent", ag), ("expert", ex)):
                _guard(f"{name} surrogate loss", s.Cf if head == "wasserstein" else [s.F1, s.F2], record)
            obj = discriminator_objective(ag, ex, cfg, rail)
            _guard("discriminator objective", [obj], record)
            disc_obj = obj if disc_obj is None else disc_obj
            if head == "wasserstein":
                grad = discriminator_gradient_w(ag, ex, cfg, algo.tail_rule)
            else:
                grad = discriminator_gradient_js(ag, ex, cfg, rail, algo.tail_rule)
            disc = disc.with_params(adam_step(disc_opt, disc.params, grad, "ascend"))
            if head == "wasserstein":
                disc = clip_weights(disc, algo.clip_bound)
            _guard("discriminator parameters", disc.params, record)
            result.disc_updates += 1
            if record_params:
                result.param_history.append(("disc", it, disc.params.copy()))

        surr = surrogate_losses(disc, trajs, head, A, with_grads=False, steps=steps)
        F = surr.Cf if head == "wasserstein" else surr.F1
        _guard("agent surrogate loss", F, record)
        logp_old = step_log_probs(pol_net, steps)
        weights = policy_step_weights(steps, F, -logp_old, cfg, algo.entropy_weight, algo.baseline)
        uobs, _, counts = steps.distinct_obs
        p_start = forward(pol_net, uobs)

        def surrogate(params):
            logp = step_log_probs(pol_net.with_params(params), steps)
            return float(weights @ np.exp(logp - logp_old))

        for _ in range(algo.gen_steps):
            ratio = np.exp(step_log_probs(pol_net, steps) - logp_old)
            grad = step_score(pol_net, steps, weights * ratio)
            _guard("policy gradient", grad, record)
            if algo.policy_optimizer == "kl_constrained":
                pol_net, _ = kl_constrained_step(pol_net, grad, steps.obs, algo.kl, surrogate)
            else:
                pol_net = pol_net.with_params(adam_step(pol_opt, pol_net.params, grad, "descend"))
            _guard("policy parameters", pol_net.params, record)
            result.policy_updates += 1
            if record_params:
                result.param_history.append(("policy", it, pol_net.params.copy()))

        record["disc_objective"] = disc_obj
        record["kl"] = mean_kl(p_start, forward(pol_net, uobs), counts)
        record["entropy"] = float(np.sum(steps.discount * -logp_old) / steps.n_traj)
        result.records.append(record)
        if on_record is not None:
            on_record(record)

    result.policy = pol_net
    result.discriminator = disc
    return result
