"""Independent oracles and the property suites behind ``riskimit verify``.

Each suite returns ``(name, ok, detail)``.  The oracles here deliberately
avoid the code paths they check: the Rockafellar-Uryasev minimum is found by
scanning a grid, the dual optimum by a generic LP solver, gradients by
central differences.
"""

from __future__ import annotations

import time

import numpy as np

from .approximator import TablePolicy, backward, forward, init_mlp
from .environments import (
    TabularMdp,
    Trajectory,
    enumerate_trajectories,
    make_bandit,
    make_gridworld,
    sample_trajectories,
)
from .imitation import (
    ImitationAlgo,
    discriminator_gradient_js,
    discriminator_gradient_w,
    discriminator_objective,
    surrogate_losses,
    train,
)
from .risk import (
    LossBatch,
    RiskConfig,
    cvar_alpha,
    cvar_dual_oracle,
    cvar_tail_average,
    distorted_occupancy,
    rho_lambda,
)

ALPHAS = tuple(round(0.05 * i, 2) for i in range(1, 21))


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def ru_grid_minimum(losses, weights, alpha: float, step: float = 1e-4) -> float:
    """min over nu of nu + E[(C - nu)_+]/alpha on a grid plus the sample values.

    The objective is piecewise linear with kinks at the samples, so adding
    them to the grid makes the scan exact.
    """
    c = np.asarray(losses, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    order = np.argsort(c)
    cs, ws = c[order], w[order]
    # suffix sums: mass and first moment of the samples from index i on
    w_tail = np.concatenate([np.cumsum(ws[::-1])[::-1], [0.0]])
    wc_tail = np.concatenate([np.cumsum((ws * cs)[::-1])[::-1], [0.0]])

    def objective(nu, above):
        return nu + (wc_tail[above] - nu * w_tail[above]) / alpha

    # the minimizer lies in [min C, max C]; grid point i sits below the samples with cell >= i
    lo = cs[0]
    n_grid = int(np.floor((cs[-1] - lo) / step)) + 1
    grid = lo + step * np.arange(n_grid)
    cell = np.minimum(np.floor((cs - lo) / step).astype(np.int64), n_grid - 1)
    below = np.cumsum(np.bincount(cell, minlength=n_grid)) - np.bincount(cell, minlength=n_grid)
    on_grid = objective(grid, below).min()
    at_samples = objective(cs, np.searchsorted(cs, cs, side="right")).min()
    return float(min(on_grid, at_samples))


def lp_cvar(losses, weights, alpha: float) -> float:
    """sup of sum w zeta C over 0 <= zeta <= 1/alpha, sum w zeta = 1, by linear programming."""
    from scipy.optimize import linprog

    c = np.asarray(losses, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    # variables q_i = w_i zeta_i in [0, w_i / alpha]
    res = linprog(-c, A_eq=np.ones((1, c.size)), b_eq=[1.0], bounds=np.column_stack([np.zeros(c.size), w / alpha]),
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    if not res.success:
        raise RuntimeError(res.message)
    return float(c @ res.x)


def random_batch(rng: np.random.Generator):
    """Random weighted batch: sometimes tied, sometimes uniform, N in [1, 200]."""
    n = int(rng.integers(1, 201))
    kind = rng.integers(3)
    if kind == 0:
        losses = rng.normal(size=n) * rng.uniform(0.1, 5.0)
    elif kind == 1:
        losses = rng.integers(-3, 4, size=n).astype(np.float64)
    else:
        losses = rng.exponential(size=n) * 3.0
    weights = rng.dirichlet(np.full(n, 0.5)) if rng.random() < 0.5 else np.full(n, 1.0 / n)
    return losses, weights, float(rng.choice(ALPHAS))


def central_difference(f, x: np.ndarray, direction: np.ndarray, h: float) -> float:
    return (f(x + h * direction) - f(x - h * direction)) / (2.0 * h)


def relative_error(a, b, floor: float = 1e-6) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def two_state_mdp(horizon: int = 3, gamma: float = 0.9) -> TabularMdp:
    """Two states, two actions, stochastic transitions and two-atom random costs."""
    p = np.array([[[0.7, 0.3], [0.2, 0.8]],
                  [[0.5, 0.5], [0.9, 0.1]]])
    values = np.array([[[1.0, 4.0], [0.0, 6.0]],
                       [[2.0, 2.5], [0.5, 8.0]]])
    probs = np.array([[[0.8, 0.2], [0.6, 0.4]],
                      [[0.5, 0.5], [0.9, 0.1]]])
    return TabularMdp(p, values, probs, np.array([0.6, 0.4]), horizon, gamma, name="two_state")


def tabular_fixtures():
    """(name, mdp, policy matrix) triples small enough to enumerate."""
    bandit = make_bandit([[(1.5, 1.0)], [(0.0, 0.9), (10.0, 0.1)]])
    chain = TabularMdp.deterministic_cost(
        np.array([[[0.0, 1.0]], [[1.0, 0.0]]]), np.array([[1.0], [3.0]]), np.array([1.0, 0.0]), 4, 0.9, "chain")
    two = two_state_mdp()
    return [
        ("bandit_uniform", bandit, np.array([[0.5, 0.5]])),
        ("bandit_skewed", bandit, np.array([[0.2, 0.8]])),
        ("deterministic_chain", chain, np.array([[1.0], [1.0]])),
        ("two_state_uniform", two, np.full((2, 2), 0.5)),
        ("two_state_skewed", two, np.array([[0.9, 0.1], [0.3, 0.7]])),
        ("two_state_long", two_state_mdp(horizon=5, gamma=0.95), np.array([[0.4, 0.6], [0.75, 0.25]])),
    ]


def random_trajectories(rng, n: int, horizon: int, obs_dim: int, action_count: int, gamma: float):
    return [Trajectory(rng.normal(size=(horizon + 1, obs_dim)), rng.integers(action_count, size=horizon),
                       np.zeros(horizon), gamma) for _ in range(n)]


def tie_free(values, gap: float = 1e-4) -> bool:
    v = np.sort(np.asarray(values))
    return bool(np.all(np.diff(v) > gap))


def discriminator_fd_fixture(rng, head: str):
    """Small discriminator and random agent/expert batches with well-separated losses."""
    obs_dim, A, T, gamma = 3, 2, 4, 0.9
    out_act = "sigmoid" if head == "js" else "identity"
    while True:
        disc = init_mlp((obs_dim + A, 6, 6, 1), ("tanh", "tanh", out_act), rng)
        if head == "js":
            disc = disc.with_params(disc.params * 2.0)
        agent = random_trajectories(rng, int(rng.integers(10, 30)), T, obs_dim, A, gamma)
        expert = random_trajectories(rng, int(rng.integers(10, 30)), T, obs_dim, A, gamma)
        ag = surrogate_losses(disc, agent, head, A, with_grads=False)
        ex = surrogate_losses(disc, expert, head, A, with_grads=False)
        keys = ("F1", "F2") if head == "js" else ("Cf", "Cf")
        if tie_free(getattr(ag, keys[0])) and tie_free(getattr(ex, keys[1])):
            return disc, agent, expert, A


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def check_risk_oracles(n_batches: int = 1000, seed: int = 0, tol: float = 1e-9):
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_lp = 0.0
    start = time.perf_counter()
    for _ in range(n_batches):
        losses, weights, alpha = random_batch(rng)
        batch = LossBatch(losses, weights)
        value = cvar_alpha(batch, alpha)
        scale = max(1.0, abs(value))
        worst = max(worst,
                    abs(value - ru_grid_minimum(losses, weights, alpha)) / scale,
                    abs(value - cvar_dual_oracle(batch, alpha)[0]) / scale,
                    abs(value - cvar_tail_average(batch, alpha)) / scale)
        worst_lp = max(worst_lp, abs(value - lp_cvar(losses, weights, alpha)) / scale)
    elapsed = time.perf_counter() - start
    ok = worst <= tol and worst_lp <= tol
    return ("risk_oracles", ok,
            f"{n_batches} batches, max gap RU/greedy/tail {worst:.2e}, LP {worst_lp:.2e}, {elapsed:.1f}s")


def check_coherence(n_batches: int = 1000, seed: int = 0, tol: float = 1e-10):
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(n_batches):
        losses, weights, alpha = random_batch(rng)
        batch = LossBatch(losses, weights)
        value = cvar_alpha(batch, alpha)
        scale = max(1.0, float(np.max(np.abs(losses))))
        if value < batch.mean() - tol * scale:
            failures.append((i, "dominance"))
        chain = [cvar_alpha(batch, a) for a in ALPHAS]
        if np.any(np.diff(chain) > tol * scale):
            failures.append((i, "monotonicity"))
        shift = float(rng.normal() * 5.0)
        if abs(cvar_alpha(LossBatch(losses + shift, weights), alpha) - (value + shift)) > tol * (scale + abs(shift)):
            failures.append((i, "translation"))
        k = float(rng.uniform(0.1, 10.0))
        if abs(cvar_alpha(LossBatch(k * losses, weights), alpha) - k * value) > tol * k * scale:
            failures.append((i, "homogeneity"))
    return ("cvar_coherence", not failures,
            f"{n_batches} batches, {len(failures)} violations" + (f" first {failures[0]}" if failures else ""))


def check_backward(n_cases: int = 100, seed: int = 0, tol: float = 1e-4, h: float = 1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    acts = ("tanh", "identity", "sigmoid")
    for _ in range(n_cases):
        depth = int(rng.integers(1, 4))
        sizes = tuple(int(rng.integers(1, 5)) for _ in range(depth + 1))
        activations = tuple(str(rng.choice(acts)) for _ in range(depth - 1)) + (str(rng.choice(acts + ("softmax",))),)
        net = init_mlp(sizes, activations, rng)
        x = rng.normal(size=sizes[0])
        cot = rng.normal(size=sizes[-1])
        g = backward(net, x, cot)
        fd = np.empty_like(g)
        for j in range(g.size):
            e = np.zeros_like(g)
            e[j] = 1.0
            fd[j] = central_difference(lambda p: float(cot @ forward(net.with_params(p), x)), net.params, e, h)
        worst = max(worst, relative_error(g, fd))
    return ("backward_fd", worst <= tol, f"{n_cases} networks, max relative error {worst:.2e}")


def check_discriminator_gradients(n_fixtures: int = 100, seed: int = 0, tol: float = 1e-4,
                                  h: float = 1e-6, directions: int = 20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    start = time.perf_counter()
    for i in range(n_fixtures):
        head = "js" if i % 2 == 0 else "wasserstein"
        lam = (0.0, 0.5, 2.0)[i % 3]
        cfg = RiskConfig(alpha=float(rng.choice([0.1, 0.2, 0.3, 0.5])), lam=lam, gamma=0.9)
        rail = head == "js" and i % 4 == 2
        disc, agent, expert, A = discriminator_fd_fixture(rng, head)

        def objective(params):
            d = disc.with_params(params)
            ag = surrogate_losses(d, agent, head, A, with_grads=False)
            ex = surrogate_losses(d, expert, head, A, with_grads=False)
            return discriminator_objective(ag, ex, cfg, rail)

        ag = surrogate_losses(disc, agent, head, A)
        ex = surrogate_losses(disc, expert, head, A)
        if head == "js":
            g = discriminator_gradient_js(ag, ex, cfg, rail)
        else:
            g = discriminator_gradient_w(ag, ex, cfg)
        for _ in range(directions):
            u = rng.normal(size=g.size)
            worst = max(worst, relative_error(g @ u, central_difference(objective, disc.params, u, h)))
    elapsed = time.perf_counter() - start
    return ("discriminator_gradient_fd", worst <= tol,
            f"{n_fixtures} fixtures x {directions} directions, max relative error {worst:.2e}, {elapsed:.1f}s")


def check_distorted_occupancy(tol: float = 1e-8):
    worst = 0.0
    for _, mdp, pi in tabular_fixtures():
        for alpha in (0.1, 0.3, 0.55, 1.0):
            for lam in (0.0, 0.5, 2.0):
                cfg = RiskConfig(alpha, lam, mdp.gamma)
                d = distorted_occupancy(mdp, pi, cfg)
                enum = enumerate_trajectories(mdp, pi)
                target = rho_lambda(LossBatch(enum.losses, enum.probabilities / enum.probabilities.sum()), cfg)
                worst = max(worst, abs(d.expected_cost(mdp.cost_values) - target))
    return ("distorted_occupancy", worst <= tol, f"max |E_d[c] - rho| {worst:.2e}")


def check_clipping(iterations: int = 20, seed: int = 0, bound: float = 0.05):
    env = make_gridworld(horizon=6)
    uniform = np.full((env.state_count, env.action_count), 1.0 / env.action_count)
    expert = sample_trajectories(env, TablePolicy(uniform), 30, seed, key=(9,))
    algo = ImitationAlgo("w_rs_gail", RiskConfig(0.3, 0.5, env.gamma), batch_size=30, disc_hidden=(16, 16),
                         policy_hidden=(16, 16), clip_bound=bound, disc_lr=0.05)
    res = train(algo, env, expert, seed, iterations, record_params=True)
    maxima = [float(np.max(np.abs(p))) for kind, _, p in res.param_history if kind == "disc"]
    violations = sum(m > bound for m in maxima)
    return ("weight_clipping", violations == 0 and len(maxima) == iterations,
            f"{len(maxima)} discriminator updates, {violations} violations, max |w| {max(maxima):.4f}")


def run_all(seed: int = 0, quick: bool = True):
    """All suites; ``quick`` trims batch counts for interactive use."""
    n = 200 if quick else 1000
    suites = [
        lambda: check_risk_oracles(n, seed),
        lambda: check_coherence(n, seed),
        lambda: check_backward(30 if quick else 100, seed),
        lambda: check_discriminator_gradients(20 if quick else 100, seed),
        lambda: check_distorted_occupancy(),
        lambda: check_clipping(seed=seed),
    ]
    results = []
    for suite in suites:
        try:
            results.append(suite())
        except Exception as exc:  # a crashing suite is a failed suite
            results.append((getattr(suite, "__name__", "suite"), False, f"raised {exc!r}"))
    return results
