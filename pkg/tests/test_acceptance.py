"""Acceptance criteria, one test and one PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -v`` (the lines are printed even with
output capture on) or ``python tests/test_acceptance.py`` for the lines
alone.  The directional experiment takes roughly ten minutes.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

from riskimit.approximator import SoftmaxPolicy, TablePolicy, rollout_policy
from riskimit.cli import main as cli_main
from riskimit.costnoise import NoisyCostEnv, fit_kmeans
from riskimit.environments import make_gridworld, sample_trajectories, substream
from riskimit.expert import train_cvar_expert
from riskimit.harness import evaluate_policy, run_summary
from riskimit.imitation import ImitationAlgo, train
from riskimit.risk import RiskConfig
from riskimit.verify import (
    check_backward,
    check_clipping,
    check_coherence,
    check_discriminator_gradients,
    check_distorted_occupancy,
    check_risk_oracles,
)

sys.path.insert(0, str(Path(__file__).parent))
import pg_oracle  # noqa: E402

SEED = 2024


def timed(fn, *args, **kw):
    start = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - start


def uniform_data(env, n=100, seed=5):
    table = np.full((env.state_count, env.action_count), 1.0 / env.action_count)
    return sample_trajectories(env, TablePolicy(table), n, seed, key=(4,))


# --- criteria: each returns (ok, detail) --------------------------------------


def crit_risk_oracles():
    (_, ok, detail), secs = timed(check_risk_oracles, 1000, SEED)
    return ok and secs < 10, f"{detail}; total {secs:.1f}s (limit 10s)"


def crit_coherence():
    _, ok, detail = check_coherence(1000, SEED)
    return ok, detail


def crit_gradients():
    (_, ok_d, det_d), secs_d = timed(check_discriminator_gradients, 100, SEED)
    (_, ok_b, det_b), secs_b = timed(check_backward, 100, SEED)
    secs = secs_d + secs_b
    return ok_d and ok_b and secs < 60, f"JS/W: {det_d}; backward: {det_b}; total {secs:.1f}s (limit 60s)"


def crit_policy_gradients():
    start = time.perf_counter()
    ok, parts = True, []
    for name, mdp, net, alpha in pg_oracle.fixtures():
        exact = pg_oracle.exact_gradients(mdp, net, alpha)
        est, se, _ = pg_oracle.monte_carlo_gradients(mdp, net, alpha, 10**6, seed=SEED)
        for i, key in enumerate(("mean", "cvar", "entropy")):
            z = float(np.max(np.abs(est[key] - exact[i]) / se[key]))
            ok &= z <= 3.0
            parts.append(f"{name}/{key} {z:.2f}")
    secs = time.perf_counter() - start
    return ok and secs < 300, f"max |MC - exact|/SE: {', '.join(parts)}; {secs:.1f}s (limit 300s)"


def crit_lambda_zero():
    env = make_gridworld()
    data = uniform_data(env)
    common = dict(generator_steps=1, policy_optimizer="kl_constrained", disc_lr=1e-2)
    gail = ImitationAlgo("gail", RiskConfig(0.3, 0.5, env.gamma), **common)
    js = ImitationAlgo("js_rs_gail", RiskConfig(0.3, 0.0, env.gamma), **common)
    a = train(gail, env, data, SEED, 50, record_params=True).param_history
    b = train(js, env, data, SEED, 50, record_params=True).param_history
    diff = max(float(np.max(np.abs(pa - pb))) for (_, _, pa), (_, _, pb) in zip(a, b))
    aligned = len(a) == len(b) == 100 and all(x[:2] == y[:2] for x, y in zip(a, b))
    return aligned and diff <= 1e-12, f"{len(a)} parameter snapshots over 50 iterations, max |diff| {diff:.1e}"


def crit_distorted_occupancy():
    _, ok, detail = check_distorted_occupancy(1e-8)
    return ok, detail


def crit_clipping():
    env = make_gridworld()
    algo = ImitationAlgo("w_rs_gail", RiskConfig(0.3, 0.5, env.gamma), policy_optimizer="kl_constrained")
    res = train(algo, env, uniform_data(env), SEED, 300, record_params=True)
    maxima = [float(np.max(np.abs(p))) for kind, _, p in res.param_history if kind == "disc"]
    bad = sum(m > algo.clip_bound for m in maxima)
    short = check_clipping(iterations=20, seed=SEED)
    ok = bad == 0 and len(maxima) == 300 and short[1]
    return ok, f"300-iteration W-RS-GAIL run: {len(maxima)} updates, {bad} violations, max |w| {max(maxima):.4f}"


def directional_experiment(n_seeds=5, iterations=300, last=100):
    """Noisy-cost gridworld, CVaR expert, GAIL vs RAIL vs JS-RS-GAIL.

    Pipeline: a CVaR expert on the clean gridworld supplies the pairs that
    fit the cost-noise clusters; a second CVaR expert is trained on the
    noisy-cost gridworld and provides the 100 demonstrations and the
    reference CVaR (20000 evaluation rollouts).
    """
    cfg = RiskConfig(0.3, 0.5, 0.95)
    base = make_gridworld()
    clean = train_cvar_expert(base, cfg, 200, seed=1, lr=3e-2).policy
    clean_data = sample_trajectories(base, rollout_policy(SoftmaxPolicy(clean), base), 100, 7, key=(4,))
    states = np.concatenate([tr.states[: tr.length] for tr in clean_data])
    actions = np.concatenate([tr.actions[: tr.length] for tr in clean_data])
    env = NoisyCostEnv(base, fit_kmeans(states, actions, base.action_count, 15, substream(0, 6)), "hopper_style")
    expert = train_cvar_expert(env, cfg, 200, seed=1, lr=3e-2).policy
    expert_cvar = evaluate_policy(expert, env, 20000, cfg, seed=0)["cvar_alpha"]
    data = sample_trajectories(env, rollout_policy(SoftmaxPolicy(expert), env), 100, 7, key=(4,))
    gaps = {}
    for variant in ("gail", "rail", "js_rs_gail"):
        algo = ImitationAlgo(variant, cfg, policy_optimizer="kl_constrained", disc_lr=1e-2)
        gaps[variant] = [abs(run_summary(train(algo, env, data, seed, iterations).records, "cvar_alpha",
                                         "last_k", last) - expert_cvar) for seed in range(n_seeds)]
    return expert_cvar, gaps


def crit_directional():
    (expert_cvar, gaps), secs = timed(directional_experiment)
    med = {v: float(np.median(g)) for v, g in gaps.items()}
    wins = sum(j < g for j, g in zip(gaps["js_rs_gail"], gaps["gail"]))
    ordered = med["js_rs_gail"] <= med["rail"] <= med["gail"]
    ok = ordered and wins >= 4 and secs <= 1800
    per_seed = "; ".join(f"{v} " + " ".join(f"{x:.3f}" for x in g) for v, g in gaps.items())
    detail = (f"expert CVaR {expert_cvar:.3f}; median gap js_rs_gail {med['js_rs_gail']:.3f}, "
              f"rail {med['rail']:.3f}, gail {med['gail']:.3f}; js beats gail in {wins}/5 seeds; "
              f"per-seed gaps [{per_seed}]; {secs:.0f}s (limit 1800s)")
    return ok, detail


CLI_CONFIG = """\
[env]
horizon = 8
cost_noise = hopper_style

[algo]
batch_size = 30
policy_hidden = [16]
disc_hidden = [16]

[run]
seed = 4
iterations = 15
expert_iters = 20
expert_batch = 30
expert_hidden = [16]
dataset_size = 20
eval_trajectories = 50
kmeans_k = 5
aggregate_k = 10
aggregate_m = 3
"""


def cli_pipeline(out: Path, ini: Path, workers: int) -> tuple[dict, list]:
    steps = [("train-expert", "--env.cost_noise", "none"), ("gen-dataset", "--env.cost_noise", "none"),
             ("fit-noise",), ("train-expert",), ("gen-dataset",),
             ("train", "--risk.lambda", "[0, 0.5]"), ("train", "--algo", "w-rs-gail"),
             ("evaluate",), ("report",)]
    codes = [cli_main([s[0], "--config", str(ini), "--run.out_dir", str(out), "--run.workers", str(workers),
                       *s[1:]]) for s in steps]
    files = {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    return files, codes


def crit_determinism(tmp_path):
    ini = tmp_path / "cli.ini"
    ini.write_text(CLI_CONFIG)
    out = tmp_path / "out"
    runs = []
    for workers in (1, 4, 1):
        if out.exists():
            for p in sorted(out.rglob("*"), reverse=True):
                p.unlink() if p.is_file() else p.rmdir()
        runs.append(cli_pipeline(out, ini, workers))
    files0 = runs[0][0]
    same = all(r[0] == files0 for r in runs[1:])
    ok = same and all(c == 0 for r in runs for c in r[1])
    return ok, f"3 full pipelines (workers 1, 4, 1): {len(files0)} artifacts, byte-identical={same}"


# --- pytest entry points -------------------------------------------------------


def emit(capsys, name, result):
    ok, detail = result
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok


def test_risk_estimator_oracle_agreement(capsys):
    assert emit(capsys, "risk_oracle_agreement", crit_risk_oracles())


def test_cvar_coherence(capsys):
    assert emit(capsys, "cvar_coherence", crit_coherence())


def test_gradient_correctness(capsys):
    assert emit(capsys, "gradient_correctness", crit_gradients())


def test_policy_gradient_unbiasedness(capsys):
    assert emit(capsys, "policy_gradient_unbiasedness", crit_policy_gradients())


def test_lambda_zero_collapse(capsys):
    assert emit(capsys, "lambda_zero_collapse", crit_lambda_zero())


def test_distorted_occupancy_identity(capsys):
    assert emit(capsys, "distorted_occupancy_identity", crit_distorted_occupancy())


def test_weight_clipping_invariant(capsys):
    assert emit(capsys, "weight_clipping_invariant", crit_clipping())


def test_directional_reproduction(capsys):
    # soft criterion: a miss is reported and analysed, not treated as a defect
    if not emit(capsys, "directional_reproduction (soft)", crit_directional()):
        pytest.xfail("soft directional criterion not met; see the decisions ledger")


def test_determinism(tmp_path, capsys):
    assert emit(capsys, "determinism", crit_determinism(tmp_path))


if __name__ == "__main__":
    import tempfile

    checks = [
        ("risk_oracle_agreement", crit_risk_oracles), ("cvar_coherence", crit_coherence),
        ("gradient_correctness", crit_gradients), ("policy_gradient_unbiasedness", crit_policy_gradients),
        ("lambda_zero_collapse", crit_lambda_zero), ("distorted_occupancy_identity", crit_distorted_occupancy),
        ("weight_clipping_invariant", crit_clipping), ("directional_reproduction (soft)", crit_directional),
    ]
    failed = 0
    for name, fn in checks:
        ok, detail = fn()
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", flush=True)
    with tempfile.TemporaryDirectory() as tmp:
        ok, detail = crit_determinism(Path(tmp))
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} determinism: {detail}", flush=True)
    sys.exit(1 if failed else 0)
