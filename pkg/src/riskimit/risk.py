"""Value-at-risk, conditional value-at-risk and the mean-CVaR functional.

All estimators work on a (possibly weighted) empirical distribution of
scalar losses, so Monte-Carlo batches and exact enumerated distributions
share one code path.  Losses follow the cost convention: larger is worse,
and the tail of interest is the upper tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-12


class RiskError(ValueError):
    """Raised for invalid risk levels or malformed loss batches."""


@dataclass(frozen=True)
class RiskConfig:
    alpha: float = 0.3
    lam: float = 0.5
    gamma: float = 0.99

    def __post_init__(self):
        check_alpha(self.alpha)
        if not self.lam >= 0.0:
            raise RiskError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.gamma < 1.0:
            raise RiskError(f"gamma must lie in [0, 1), got {self.gamma}")


@dataclass(frozen=True)
class LossBatch:
    """Scalar losses with an optional probability vector over them."""

    losses: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        losses = np.asarray(self.losses, dtype=np.float64).ravel()
        if losses.size == 0:
            raise RiskError("loss batch must be nonempty")
        if not np.all(np.isfinite(losses)):
            raise RiskError("loss batch contains non-finite values")
        if self.weights is None:
            weights = np.full(losses.size, 1.0 / losses.size)
        else:
            weights = np.asarray(self.weights, dtype=np.float64).ravel()
            if weights.shape != losses.shape:
                raise RiskError("weights and losses differ in length")
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > SIMPLEX_TOL * max(1, losses.size):
                raise RiskError("weights must lie on the probability simplex")
        object.__setattr__(self, "losses", losses)
        object.__setattr__(self, "weights", weights)

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> float:
        return float(np.dot(self.weights, self.losses))


@dataclass(frozen=True)
class RiskEnvelopeDensity:
    zeta: np.ndarray
    weights: np.ndarray


def check_alpha(alpha: float) -> float:
    if not (0.0 < alpha <= 1.0):
        raise RiskError(f"alpha must lie in (0, 1], got {alpha}")
    return float(alpha)


def as_batch(batch) -> LossBatch:
    if isinstance(batch, LossBatch):
        return batch
    return LossBatch(np.asarray(batch, dtype=np.float64))


def var_alpha(batch, alpha: float) -> float:
    """Left (1 - alpha)-quantile: inf{t : P(C <= t) >= 1 - alpha}.

    For alpha = 1 the infimum is taken over the support, i.e. the smallest
    loss carrying positive weight.
    """
    check_alpha(alpha)
    batch = as_batch(batch)
    losses, weights = batch.losses, batch.weights
    n = losses.size
    order = np.argsort(losses, kind="stable")
    if batch.uniform:
        # integer order statistic avoids cumulative round-off
        k = max(1, math.ceil((1.0 - alpha) * n - 1e-9))
        return float(losses[order[k - 1]])
    keep = weights[order] > 0
    sorted_losses = losses[order][keep]
    cum = np.cumsum(weights[order][keep])
    idx = int(np.searchsorted(cum, (1.0 - alpha) - 1e-12, side="left"))
    idx = min(idx, sorted_losses.size - 1)
    return float(sorted_losses[idx])


def ru_objective(batch, alpha: float, nu) -> np.ndarray:
    """nu + E[(C - nu)_+] / alpha, vectorized over nu."""
    batch = as_batch(batch)
    nu = np.asarray(nu, dtype=np.float64)
    excess = np.maximum(batch.losses[None, :] - nu.reshape(-1, 1), 0.0) @ batch.weights
    return (nu.ravel() + excess / alpha).reshape(nu.shape)


def cvar_alpha(batch, alpha: float) -> float:
    """CVaR via the Rockafellar-Uryasev expression evaluated at the VaR."""
    check_alpha(alpha)
    batch = as_batch(batch)
    nu = var_alpha(batch, alpha)
    excess = float(np.dot(batch.weights, np.maximum(batch.losses - nu, 0.0)))
    return nu + excess / alpha


def cvar_tail_average(batch, alpha: float) -> float:
    """Tail-mean formula: mass strictly above VaR plus the fractional VaR atom."""
    check_alpha(alpha)
    batch = as_batch(batch)
    nu = var_alpha(batch, alpha)
    above = batch.losses > nu
    p_above = float(batch.weights[above].sum())
    return (float(np.dot(batch.weights[above], batch.losses[above])) + (alpha - p_above) * nu) / alpha


def cvar_dual_oracle(batch, alpha: float) -> tuple[float, RiskEnvelopeDensity]:
    """Solve sup over the risk envelope by greedy mass assignment.

    Atoms are visited from the largest loss down; each receives density
    1/alpha until a total reference mass of alpha has been handed out, the
    boundary atom gets the fractional remainder.
    """
    check_alpha(alpha)
    batch = as_batch(batch)
    losses, weights = batch.losses, batch.weights
    zeta = np.zeros_like(losses)
    remaining = alpha
    for i in np.argsort(-losses, kind="stable"):
        if remaining <= 0.0:
            break
        w = weights[i]
        if w <= 0.0:
            continue
        take = min(w, remaining)
        zeta[i] = take / (alpha * w)
        remaining -= take
    value = float(np.dot(weights * zeta, losses))
    return value, RiskEnvelopeDensity(zeta=zeta, weights=weights)


def tail_density(losses: Sequence[float], alpha: float, rule: str = "dual") -> np.ndarray:
    """Per-sample CVaR density for a uniform batch.

    ``dual`` returns the maximizing envelope density (fractional on the
    boundary sample); its weighted sum of per-sample gradients is the exact
    gradient of the empirical CVaR away from ties.  ``indicator`` returns
    (1/alpha) * 1{loss >= VaR}, the plug-in estimator with a strict-``>=``
    tie policy.
    """
    batch = as_batch(losses)
    if rule == "dual":
        return cvar_dual_oracle(batch, alpha)[1].zeta
    if rule == "indicator":
        nu = var_alpha(batch, alpha)
        return (batch.losses >= nu).astype(np.float64) / alpha
    raise RiskError(f"unknown tail rule {rule!r}")


def rho_lambda(batch, cfg: RiskConfig) -> float:
    """(E[C] + lambda * CVaR_alpha[C]) / (1 + lambda)."""
    return scaled_rho_lambda(batch, cfg) / (1.0 + cfg.lam)


def scaled_rho_lambda(batch, cfg: RiskConfig) -> float:
    """E[C] + lambda * CVaR_alpha[C], the form used in objectives and tables."""
    batch = as_batch(batch)
    mean = batch.mean()
    if cfg.lam == 0.0:
        return mean
    return mean + cfg.lam * cvar_alpha(batch, cfg.alpha)


def summarize(losses, cfg: RiskConfig) -> dict:
    batch = as_batch(losses)
    mean = batch.mean()
    cvar = cvar_alpha(batch, cfg.alpha)
    return {
        "mean": mean,
        "var_alpha": var_alpha(batch, cfg.alpha),
        "cvar_alpha": cvar,
        "rho_lambda": (mean + cfg.lam * cvar) / (1.0 + cfg.lam),
    }


@dataclass(frozen=True)
class DistortedOccupancy:
    """Occupancy measure of the trajectory law reweighted by xi = (1 + lam*zeta)/(1 + lam).

    ``atom_measure`` splits the (s, a) mass over cost atoms, which is what
    makes the expectation identity hold for random-cost MDPs.
    """

    measure: np.ndarray
    atom_measure: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    probabilities: np.ndarray

    def expected_cost(self, cost_values: np.ndarray) -> float:
        """Sum over (s, a, atom) of the distorted mass times the atom's cost."""
        return float(np.sum(self.atom_measure * cost_values))


def distorted_occupancy(mdp, policy, cfg: RiskConfig) -> DistortedOccupancy:
    from .environments import enumerate_trajectories

    enum = enumerate_trajectories(mdp, policy)
    batch = LossBatch(enum.losses, enum.probabilities / enum.probabilities.sum())
    _, density = cvar_dual_oracle(batch, cfg.alpha)
    zeta = density.zeta
    xi = (1.0 + cfg.lam * zeta) / (1.0 + cfg.lam)
    mass = enum.probabilities * xi
    discounts = mdp.gamma ** np.arange(mdp.horizon)
    atom_measure = np.zeros(mdp.cost_values.shape)
    for t in range(mdp.horizon):
        np.add.at(
            atom_measure,
            (enum.state_index[:, t], enum.actions[:, t], enum.cost_atoms[:, t]),
            mass * discounts[t],
        )
    return DistortedOccupancy(
        measure=atom_measure.sum(axis=2),
        atom_measure=atom_measure,
        xi=xi,
        zeta=zeta,
        probabilities=enum.probabilities,
    )
