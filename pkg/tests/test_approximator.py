import numpy as np
import pytest

from riskimit.approximator import (
    AdamState,
    Mlp,
    ShapeError,
    SoftmaxPolicy,
    adam_step,
    backward,
    clip_weights,
    forward,
    forward_logits,
    init_mlp,
    jvp_logits,
    load_checkpoint,
    load_mlp,
    param_count,
    per_sample_gradients,
    save_mlp,
)
from riskimit.verify import central_difference, check_backward, relative_error


def reference_forward(net, x):
    """Independent re-evaluation with explicit loops over units."""
    a = list(map(float, x))
    offset = 0
    p = net.params
    for fan_in, fan_out, act in zip(net.layer_sizes[:-1], net.layer_sizes[1:], net.activations):
        z = []
        for o in range(fan_out):
            row = p[offset + o * fan_in: offset + (o + 1) * fan_in]
            z.append(sum(w * v for w, v in zip(row, a)) + p[offset + fan_in * fan_out + o])
        offset += fan_in * fan_out + fan_out
        if act == "tanh":
            a = [np.tanh(v) for v in z]
        elif act == "sigmoid":
            a = [1 / (1 + np.exp(-v)) for v in z]
        elif act == "softmax":
            e = [np.exp(v - max(z)) for v in z]
            a = [v / sum(e) for v in e]
        else:
            a = z
    return np.array(a)


def test_param_count():
    assert param_count((4, 32, 32, 2)) == 5 * 32 + 33 * 32 + 33 * 2
    net = init_mlp((3, 5, 2), ("tanh", "softmax"), np.random.default_rng(0))
    assert net.param_count == 4 * 5 + 6 * 2


def test_zero_network_outputs_zero():
    net = Mlp((3, 4, 2), ("tanh", "tanh"), np.zeros(param_count((3, 4, 2))))
    np.testing.assert_array_equal(forward(net, [1.0, -2.0, 3.0]), 0.0)


def test_identity_layer():
    net = Mlp((3, 3), ("identity",), np.concatenate([np.eye(3).ravel(), np.zeros(3)]))
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(forward(net, x), x)


def test_forward_matches_reference():
    rng = np.random.default_rng(1)
    for act in ("tanh", "sigmoid", "softmax", "identity"):
        net = init_mlp((4, 6, 5, 3), ("tanh", "sigmoid", act), rng)
        x = rng.normal(size=4)
        np.testing.assert_allclose(forward(net, x), reference_forward(net, x), rtol=1e-12, atol=1e-14)


def test_output_ranges():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 4)) * 5
    soft = forward(init_mlp((4, 8, 3), ("tanh", "softmax"), rng), X)
    assert np.all(np.abs(soft.sum(axis=1) - 1.0) <= 1e-12)
    sig = forward(init_mlp((4, 8, 1), ("tanh", "sigmoid"), rng), X)
    assert np.all((sig > 0) & (sig < 1))


def test_shape_errors():
    net = init_mlp((3, 2), ("identity",), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(net, np.zeros(4))
    with pytest.raises(ShapeError):
        backward(net, np.zeros(3), np.zeros(3))
    with pytest.raises(ShapeError):
        Mlp((3, 2), ("identity",), np.zeros(5))
    with pytest.raises(ShapeError):
        Mlp((3, 4, 2), ("softmax", "tanh"), np.zeros(param_count((3, 4, 2))))


def test_backward_finite_differences():
    name, ok, detail = check_backward(n_cases=100, seed=3)
    assert ok, detail


def test_backward_zero_cotangent():
    net = init_mlp((3, 4, 2), ("tanh", "softmax"), np.random.default_rng(4))
    np.testing.assert_array_equal(backward(net, np.ones(3), np.zeros(2)), 0.0)


def test_linear_net_gradient_is_constant():
    rng = np.random.default_rng(5)
    net = init_mlp((3, 2), ("identity",), rng)
    x, cot = rng.normal(size=3), rng.normal(size=2)
    g1 = backward(net, x, cot)
    g2 = backward(net.with_params(rng.normal(size=net.param_count)), x, cot)
    np.testing.assert_array_equal(g1, g2)


def test_per_sample_rows_sum_to_batch_gradient():
    rng = np.random.default_rng(6)
    net = init_mlp((3, 5, 2), ("tanh", "sigmoid"), rng)
    X, C = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    rows = per_sample_gradients(net, X, C)
    np.testing.assert_allclose(rows.sum(axis=0), backward(net, X, C), atol=1e-13)


def test_jvp_logits_matches_finite_differences():
    rng = np.random.default_rng(7)
    net = init_mlp((3, 6, 4), ("tanh", "softmax"), rng)
    X = rng.normal(size=(5, 3))
    v = rng.normal(size=net.param_count)
    fd = (forward_logits(net.with_params(net.params + 1e-6 * v), X)
          - forward_logits(net.with_params(net.params - 1e-6 * v), X)) / 2e-6
    assert relative_error(jvp_logits(net, X, v), fd) < 1e-6


def test_log_prob_scores_have_zero_mean():
    rng = np.random.default_rng(8)
    pol = SoftmaxPolicy(init_mlp((3, 6, 4), ("tanh", "softmax"), rng))
    s = rng.normal(size=(1, 3))
    probs = pol.probs(s)[0]
    rows = np.vstack([pol.score_rows(s, [a]) for a in range(4)])
    assert np.max(np.abs(probs @ rows)) <= 1e-8


def test_score_rows_match_finite_differences():
    rng = np.random.default_rng(9)
    net = init_mlp((3, 5, 3), ("tanh", "softmax"), rng)
    s, a = rng.normal(size=(1, 3)), [2]
    row = SoftmaxPolicy(net).score_rows(s, a)[0]
    for _ in range(10):
        u = rng.normal(size=net.param_count)
        fd = central_difference(lambda p: SoftmaxPolicy(net.with_params(p)).log_probs(s, a)[0], net.params, u, 1e-6)
        assert relative_error(row @ u, fd) < 1e-6


def test_adam_zero_gradient_keeps_params():
    st = AdamState(3, lr=0.1)
    p = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(adam_step(st, p, np.zeros(3)), p)


def test_adam_first_step_hand_computed():
    st = AdamState(2, lr=0.01)
    g = np.array([0.3, -4.0])
    out = adam_step(st, np.zeros(2), g, "descend")
    # m_hat = g, v_hat = g^2 after bias correction
    np.testing.assert_allclose(out, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    st2 = AdamState(2, lr=0.01)
    np.testing.assert_allclose(adam_step(st2, np.zeros(2), g, "ascend"), -out, rtol=1e-12)
    assert st.t == 1


def test_adam_damps_reversed_gradient():
    st = AdamState(1, lr=0.1)
    p1 = adam_step(st, np.zeros(1), np.array([1.0]))
    p2 = adam_step(st, p1, np.array([-1.0]))
    # m = 0.9*0.1 - 0.1 = -0.01 -> m_hat = -0.01/0.19, v_hat = 1
    expect = 0.1 * (0.01 / 0.19) / (1.0 + 1e-8)
    assert abs(p2[0] - p1[0]) == pytest.approx(expect, rel=1e-9)
    assert abs(p2[0] - p1[0]) < 0.1 * 1.0


def test_clip_weights():
    net = Mlp((1, 1), ("identity",), np.array([0.3, -1.0]))
    clipped = clip_weights(net, 0.05)
    np.testing.assert_array_equal(clipped.params, [0.05, -0.05])
    np.testing.assert_array_equal(clip_weights(clipped, 0.05).params, clipped.params)
    inside = Mlp((1, 1), ("identity",), np.array([0.01, -0.02]))
    np.testing.assert_array_equal(clip_weights(inside, 0.05).params, inside.params)
    with pytest.raises(ValueError):
        clip_weights(net, 0.0)


def test_checkpoint_round_trip(tmp_path):
    net = init_mlp((3, 4, 2), ("tanh", "softmax"), np.random.default_rng(10))
    path = save_mlp(net, tmp_path / "n.json", {"seed": 7})
    back = load_mlp(path)
    np.testing.assert_array_equal(back.params, net.params)
    assert back.checksum() == net.checksum()
    _, meta = load_checkpoint(path)
    assert meta == {"seed": 7}
