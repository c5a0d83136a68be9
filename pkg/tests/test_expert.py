import numpy as np
import pytest

from riskimit.approximator import SoftmaxPolicy, forward, init_mlp
from riskimit.environments import EnvError, make_bandit, make_gridworld, occupancy_measure, read_dataset
from riskimit.expert import (
    deterministic_policies,
    exact_tabular_expert,
    generate_expert_dataset,
    train_cvar_expert,
)
from riskimit.risk import RiskConfig
from riskimit.verify import two_state_mdp

# arm 0: cost 1.5 surely; arm 1: 0 w.p. 0.9, 10 w.p. 0.1
BANDIT = make_bandit([[(1.5, 1.0)], [(0.0, 0.9), (10.0, 0.1)]])


def test_bandit_exact_expert_by_hand():
    # arm 1: mean 1, CVaR_0.3 = (0.1 * 10 + 0.2 * 0) / 0.3 = 10/3
    pi, value = exact_tabular_expert(BANDIT, RiskConfig(0.3, 0.0))
    np.testing.assert_array_equal(pi, [[0, 1]])
    assert value == pytest.approx(1.0)
    pi, value = exact_tabular_expert(BANDIT, RiskConfig(0.3, 0.5))
    np.testing.assert_array_equal(pi, [[1, 0]])
    assert value == pytest.approx(1.5 + 0.5 * 1.5)
    # indifference at lam = 0.5 / (10/3 - 1.5) = 3/11
    _, value = exact_tabular_expert(BANDIT, RiskConfig(0.3, 0.2))
    assert value == pytest.approx(1.0 + 0.2 * 10 / 3)


def test_lambda_zero_expert_minimizes_expected_cost():
    mdp = two_state_mdp(horizon=3)
    pi, value = exact_tabular_expert(mdp, RiskConfig(0.3, 0.0, mdp.gamma))
    by_occupancy = {c: float(np.sum(occupancy_measure(mdp, p) * mdp.expected_cost))
                    for c, p in deterministic_policies(mdp)}
    assert value == pytest.approx(min(by_occupancy.values()), abs=1e-10)
    assert float(np.sum(occupancy_measure(mdp, pi) * mdp.expected_cost)) == pytest.approx(value, abs=1e-10)


def finite_horizon_dp(mdp):
    """Optimal expected discounted cost over (possibly time-varying) policies."""
    V = np.zeros(mdp.state_count)
    for _ in range(mdp.horizon):
        V = np.min(mdp.expected_cost + mdp.gamma * mdp.transition @ V, axis=1)
    return float(mdp.initial @ V)


def test_lambda_zero_expert_matches_dynamic_programming():
    # on these fixtures the DP optimum is attained by a stationary policy
    for mdp in (two_state_mdp(horizon=3), two_state_mdp(horizon=5, gamma=0.95), BANDIT):
        _, value = exact_tabular_expert(mdp, RiskConfig(0.3, 0.0, mdp.gamma))
        assert value == pytest.approx(finite_horizon_dp(mdp), abs=1e-10)


def test_single_action_mdp_has_unique_policy():
    mdp = make_bandit([[(2.0, 0.5), (4.0, 0.5)]])
    pi, value = exact_tabular_expert(mdp, RiskConfig(0.5, 1.0))
    np.testing.assert_array_equal(pi, [[1.0]])
    assert value == pytest.approx(3.0 + 4.0)


def test_exhaustive_search_guard():
    with pytest.raises(EnvError):
        exact_tabular_expert(make_gridworld(), RiskConfig(0.3, 0.5))


@pytest.mark.parametrize("alpha,lam", [(0.3, 0.0), (0.3, 0.5), (0.2, 1.0)])
def test_trained_expert_matches_exhaustive_arm(alpha, lam):
    cfg = RiskConfig(alpha, lam)
    exact_pi, _ = exact_tabular_expert(BANDIT, cfg)
    res = train_cvar_expert(BANDIT, cfg, iters=150, seed=0, batch_size=100, hidden=(4,), lr=0.05)
    probs = forward(res.policy, np.ones((1, 1)))[0]
    assert probs[exact_pi[0].argmax()] > 0.95
    assert len(res.history) == 150 and 0 <= res.best_iter <= 150


def test_dataset_generation(tmp_path):
    env = make_gridworld(horizon=6)
    net = init_mlp((15, 8, 4), ("tanh", "softmax"), np.random.default_rng(0))
    a = generate_expert_dataset(net, env, 12, seed=5, path=tmp_path / "a.jsonl")
    b = generate_expert_dataset(net, env, 12, seed=5, path=tmp_path / "b.jsonl", workers=3)
    assert a.read_bytes() == b.read_bytes()
    header, trajs = read_dataset(a)
    assert header["count"] == 12 and len(trajs) == 12
    assert header["policy_checksum"] == net.checksum()
    pol = SoftmaxPolicy(net)
    for tr in trajs:
        assert np.all(np.isfinite(pol.log_probs(tr.states[:-1], tr.actions)))
    with pytest.raises(ValueError):
        generate_expert_dataset(net, env, 0, seed=5, path=tmp_path / "c.jsonl")
