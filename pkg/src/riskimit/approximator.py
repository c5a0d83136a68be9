"""Dense feed-forward networks with hand-derived gradients, Adam and clipping.

Parameters live in one flat float64 vector; each layer stores its weight
matrix (out x in, row-major) followed by its bias.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1
ACTIVATIONS = ("tanh", "identity", "sigmoid", "softmax")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mlp:
    layer_sizes: tuple
    activations: tuple
    params: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(self.activations)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ShapeError(f"bad layer sizes {sizes}")
        if len(acts) != len(sizes) - 1 or any(a not in ACTIVATIONS for a in acts):
            raise ShapeError(f"need one activation in {ACTIVATIONS} per layer, got {acts}")
        if "softmax" in acts[:-1]:
            raise ShapeError("softmax is only supported on the output layer")
        params = np.array(self.params, dtype=np.float64).ravel()
        if params.size != param_count(sizes):
            raise ShapeError(f"expected {param_count(sizes)} parameters, got {params.size}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "params", params)

    @property
    def param_count(self) -> int:
        return self.params.size

    def with_params(self, params) -> "Mlp":
        return Mlp(self.layer_sizes, self.activations, params)

    def layers(self, params=None):
        """Yield (W, b, activation) views into ``params``."""
        p = self.params if params is None else params
        offset = 0
        for fan_in, fan_out, act in zip(self.layer_sizes[:-1], self.layer_sizes[1:], self.activations):
            W = p[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
            offset += fan_in * fan_out
            b = p[offset:offset + fan_out]
            offset += fan_out
            yield W, b, act

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.layer_sizes, self.activations]).encode())
        h.update(self.params.tobytes())
        return h.hexdigest()[:16]


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum((i + 1) * o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


def init_mlp(layer_sizes, activations, rng: np.random.Generator) -> Mlp:
    """Per-layer uniform initialization in +-1/sqrt(fan_in)."""
    chunks = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out + fan_out))
    return Mlp(tuple(layer_sizes), tuple(activations), np.concatenate(chunks))


def _activate(z, act):
    if act == "tanh":
        return np.tanh(z)
    if act == "identity":
        return z
    if act == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _act_vjp(y, g, act):
    """Pull a cotangent on the activation output back to its input."""
    if act == "tanh":
        return g * (1.0 - y * y)
    if act == "identity":
        return g
    if act == "sigmoid":
        return g * y * (1.0 - y)
    return y * (g - np.sum(g * y, axis=1, keepdims=True))


def _as_batch(net: Mlp, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != net.layer_sizes[0]:
        raise ShapeError(f"input width {X.shape[-1]} does not match {net.layer_sizes[0]}")
    return X, single


def _forward_cache(net: Mlp, X):
    acts = [X]
    pre = []
    for W, b, act in net.layers():
        z = acts[-1] @ W.T + b
        pre.append(z)
        acts.append(_activate(z, act))
    return acts, pre


def forward(net: Mlp, x) -> np.ndarray:
    X, single = _as_batch(net, x)
    out = _forward_cache(net, X)[0][-1]
    return out[0] if single else out


def forward_logits(net: Mlp, x) -> np.ndarray:
    """Output pre-activation (logits for a softmax head)."""
    X, single = _as_batch(net, x)
    out = _forward_cache(net, X)[1][-1]
    return out[0] if single else out


def _deltas(net: Mlp, X, cot, through_output: bool):
    acts, _ = _forward_cache(net, X)
    cot = np.asarray(cot, dtype=np.float64).reshape(X.shape[0], net.layer_sizes[-1])
    layers = list(net.layers())
    delta = _act_vjp(acts[-1], cot, layers[-1][2]) if through_output else cot
    out = []
    for li in range(len(layers) - 1, -1, -1):
        out.append((li, delta, acts[li]))
        if li > 0:
            W = layers[li][0]
            delta = _act_vjp(acts[li], delta @ W, layers[li - 1][2])
    return out[::-1]


def backward(net: Mlp, x, cotangent, through_output: bool = True) -> np.ndarray:
    """d(cotangent . output)/d(params), summed over a batch of inputs.

    With ``through_output=False`` the cotangent is taken to act on the
    output pre-activation, e.g. on softmax logits.
    """
    X, single = _as_batch(net, x)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape[-1] != net.layer_sizes[-1] or cot.size != X.shape[0] * net.layer_sizes[-1]:
        raise ShapeError("cotangent shape does not match the output")
    grads = []
    for _, delta, a_in in _deltas(net, X, cot, through_output):
        grads.append((delta.T @ a_in).ravel())
        grads.append(delta.sum(axis=0))
    return np.concatenate(grads)


def per_sample_gradients(net: Mlp, X, cotangents, through_output: bool = True) -> np.ndarray:
    """Row i is the parameter gradient of cotangents[i] . net(X[i])."""
    X, _ = _as_batch(net, X)
    n = X.shape[0]
    blocks = []
    for _, delta, a_in in _deltas(net, X, cotangents, through_output):
        blocks.append(np.einsum("no,ni->noi", delta, a_in).reshape(n, -1))
        blocks.append(delta)
    return np.concatenate(blocks, axis=1)


def jvp_logits(net: Mlp, x, tangent) -> np.ndarray:
    """Directional derivative of the output pre-activation along ``tangent``."""
    X, single = _as_batch(net, x)
    tangent = np.asarray(tangent, dtype=np.float64)
    a, da = X, np.zeros_like(X)
    layers = list(net.layers())
    tlayers = list(net.layers(tangent))
    for li, ((W, b, act), (dW, db, _)) in enumerate(zip(layers, tlayers)):
        z = a @ W.T + b
        dz = a @ dW.T + da @ W.T + db
        if li == len(layers) - 1:
            return dz[0] if single else dz
        a = _activate(z, act)
        da = _act_vjp(a, dz, act)


# ---------------------------------------------------------------------------
# Optimization helpers
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)
    t: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(state: AdamState, params, gradient, direction: str = "descend") -> np.ndarray:
    """One bias-corrected Adam update; advances ``state`` in place."""
    params = np.asarray(params, dtype=np.float64)
    g = np.asarray(gradient, dtype=np.float64)
    if params.shape != g.shape or g.shape != state.m.shape:
        raise ShapeError("params, gradient and optimizer state differ in length")
    if direction not in ("ascend", "descend"):
        raise ValueError(f"direction must be 'ascend' or 'descend', got {direction!r}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params + update if direction == "ascend" else params - update


def clip_weights(net: Mlp, bound: float) -> Mlp:
    if bound <= 0:
        raise ValueError("clip bound must be positive")
    return net.with_params(np.clip(net.params, -bound, bound))


# ---------------------------------------------------------------------------
# Categorical policies
# ---------------------------------------------------------------------------


class SoftmaxPolicy:
    """Callable observation -> action probabilities over an Mlp with a softmax head."""

    def __init__(self, net: Mlp):
        if net.activations[-1] != "softmax":
            raise ShapeError("policy network needs a softmax output layer")
        self.net = net

    def __call__(self, obs) -> np.ndarray:
        return forward(self.net, obs)

    def probs(self, obs) -> np.ndarray:
        return forward(self.net, obs)

    def log_probs(self, obs, actions) -> np.ndarray:
        logits = forward_logits(self.net, obs)
        logits = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1))
        return logits[np.arange(len(actions)), actions] - logz

    def weighted_score(self, obs, actions, weights) -> np.ndarray:
        """sum_i weights[i] * grad_theta log pi(a_i | s_i) in one backward pass."""
        probs = forward(self.net, obs)
        cot = -probs
        cot[np.arange(len(actions)), actions] += 1.0
        return backward(self.net, obs, np.asarray(weights)[:, None] * cot, through_output=False)

    def score_rows(self, obs, actions) -> np.ndarray:
        """Per-sample grad_theta log pi(a_i | s_i)."""
        probs = forward(self.net, obs)
        cot = -probs
        cot[np.arange(len(actions)), actions] += 1.0
        return per_sample_gradients(self.net, obs, cot, through_output=False)


class TablePolicy:
    """Fixed probabilities looked up by one-hot observation."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def __call__(self, obs) -> np.ndarray:
        return self.table[int(np.argmax(obs))]


def tabulate(policy, state_count: int) -> TablePolicy:
    """Cache a policy on the one-hot observations of a tabular MDP."""
    return TablePolicy(forward(policy.net, np.eye(state_count)) if isinstance(policy, SoftmaxPolicy)
                       else np.array([policy(o) for o in np.eye(state_count)]))


def rollout_policy(policy, env):
    """A tabulated copy of ``policy`` on tabular environments, else ``policy`` itself."""
    n = getattr(env, "tabular_states", None)
    return tabulate(policy, n) if n else policy


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "activations": list(net.activations),
        "params": net.params.tolist(),
    }


def mlp_from_dict(d: dict) -> Mlp:
    if d.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {d.get('format_version')!r}")
    return Mlp(tuple(d["layer_sizes"]), tuple(d["activations"]), np.array(d["params"], dtype=np.float64))


def save_mlp(net: Mlp, path, extra: dict | None = None) -> Path:
    path = Path(path)
    payload = mlp_to_dict(net)
    payload.update(extra or {})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> tuple[Mlp, dict]:
    """Network plus the extra metadata stored next to it."""
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    net = mlp_from_dict(d)
    meta = {k: v for k, v in d.items() if k not in mlp_to_dict(net)}
    return net, meta


def load_mlp(path) -> Mlp:
    return load_checkpoint(path)[0]
