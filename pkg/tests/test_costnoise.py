import numpy as np
import pytest

from riskimit.costnoise import (
    ClusterModel,
    NoisyCostEnv,
    cost_multiplier,
    fit_kmeans,
    noisy_cost,
    sse,
)
from riskimit.environments import encode_pairs, make_gridworld, truncated_normal


def single_cluster(obs_dim=2, A=2):
    return ClusterModel(np.zeros((1, obs_dim + A)), np.ones(1), obs_dim, A)


def test_k1_is_the_mean():
    rng = np.random.default_rng(0)
    states, actions = rng.normal(size=(40, 3)), rng.integers(2, size=40)
    model = fit_kmeans(states, actions, 2, k=1, rng=rng)
    np.testing.assert_allclose(model.centroids[0], encode_pairs(states, actions, 2).mean(axis=0), atol=1e-14)
    np.testing.assert_array_equal(model.weights, [1.0])


def test_two_blobs_beat_random_centroids():
    rng = np.random.default_rng(1)
    n1, n2 = 30, 70
    states = np.vstack([rng.normal(-5, 0.3, size=(n1, 2)), rng.normal(5, 0.3, size=(n2, 2))])
    actions = np.zeros(n1 + n2, dtype=int)
    model = fit_kmeans(states, actions, 1, k=2, rng=rng)
    np.testing.assert_allclose(np.sort(model.weights), [0.3, 0.7])
    points = encode_pairs(states, actions, 1)
    fitted = sse(points, model.centroids)
    for _ in range(1000):
        pair = points[rng.choice(points.shape[0], size=2, replace=False)]
        assert fitted <= sse(points, pair) + 1e-9


def test_empty_cluster_is_repaired():
    # duplicate points force k-means++ to reseed onto the same location
    states = np.vstack([np.zeros((10, 1)), np.ones((1, 1)) * 3])
    model = fit_kmeans(states, np.zeros(11, dtype=int), 1, k=2, rng=np.random.default_rng(2))
    assert np.all(model.weights > 0)


def test_too_few_pairs():
    with pytest.raises(ValueError):
        fit_kmeans(np.zeros((3, 2)), np.zeros(3, dtype=int), 2, k=5)


def test_multiplier_formulas():
    assert cost_multiplier(1.0, 1.2, "hopper_style") == pytest.approx(1.0)
    assert cost_multiplier(1.0, -2.4, "hopper_style") == pytest.approx(2.0)
    assert cost_multiplier(0.04, 1.0, "hopper_style") == pytest.approx(1 / 0.4)
    assert cost_multiplier(0.02, 1.0, "walker_style") == pytest.approx(0.4 / 0.1)
    assert cost_multiplier(0.27, -1.0, "walker_style") == pytest.approx(0.4 / 0.5)
    with pytest.raises(ValueError):
        cost_multiplier(0.5, 1.0, "ant_style")


def test_single_cluster_multiplier_is_abs_z_over_1_2():
    model = single_cluster()
    for seed in range(10):
        z = truncated_normal(np.random.default_rng(seed), 10.0)
        c = noisy_cost(model, [0.3, -0.1], 1, 2.0, "hopper_style", np.random.default_rng(seed))
        assert c == pytest.approx(abs(z) / 1.2 * 2.0, rel=1e-14)


def test_zero_cost_stays_zero():
    model = single_cluster()
    rng = np.random.default_rng(3)
    assert all(noisy_cost(model, [1.0, 2.0], 0, 0.0, v, rng) == 0.0 for v in ("hopper_style", "walker_style"))


def test_expected_multiplier_nonincreasing_in_weight():
    # E|Z| is a common factor, so the deterministic gain must be nonincreasing
    w = np.linspace(0.03, 1.0, 200)
    for variant in ("hopper_style", "walker_style"):
        gain = np.array([cost_multiplier(x, 1.0, variant) for x in w])
        assert np.all(np.diff(gain) <= 1e-15)


def test_noisy_cost_deterministic_given_stream():
    model = ClusterModel(np.array([[0.0, 1.0, 0.0], [5.0, 0.0, 1.0]]), np.array([0.9, 0.1]), 1, 2)
    a = noisy_cost(model, [4.0], 1, 1.0, "hopper_style", np.random.default_rng(4))
    b = noisy_cost(model, [4.0], 1, 1.0, "hopper_style", np.random.default_rng(4))
    assert a == b
    # the rare cluster carries the heavier gain on the same draw
    c = noisy_cost(model, [0.0], 0, 1.0, "hopper_style", np.random.default_rng(4))
    assert a / c == pytest.approx((0.2 + np.sqrt(0.9)) / (0.2 + np.sqrt(0.1)))


def test_model_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        ClusterModel(np.zeros((2, 3)), np.array([0.5, 0.6]), 1, 2)
    with pytest.raises(ValueError):
        ClusterModel(np.zeros((2, 4)), np.array([0.5, 0.5]), 1, 2)
    model = ClusterModel(np.arange(6.0).reshape(2, 3) / 7, np.array([0.25, 0.75]), 1, 2)
    back = ClusterModel.load(model.save(tmp_path / "m.json", {"note": 1}))
    np.testing.assert_array_equal(back.centroids, model.centroids)
    np.testing.assert_array_equal(back.weights, model.weights)
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 7}')
    with pytest.raises(ValueError):
        ClusterModel.load(bad)


def test_wrapper_scales_base_costs():
    base = make_gridworld(horizon=4)
    env = NoisyCostEnv(base, ClusterModel(np.zeros((1, 19)), np.ones(1), 15, 4))
    assert env.spec.observation_dim == 15 and env.tabular_states == 15
    s = env.initial_state(np.random.default_rng(0))
    rng = np.random.default_rng(5)
    _, c_base, _ = base.step(s, 3, rng)
    z = truncated_normal(rng, 10.0)
    _, c, _ = env.step(s, 3, np.random.default_rng(5))
    assert c == pytest.approx(abs(z) / 1.2 * c_base, rel=1e-14)
