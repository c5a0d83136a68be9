"""Command-line entry point.

    riskimit <command> [--config FILE] [--algo NAME] [--section.key VALUE ...]

Commands: train-expert, gen-dataset, fit-noise, train, evaluate, report, verify.
Exit codes: 0 success, 1 usage or config error, 2 divergence, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .approximator import load_checkpoint, save_mlp
from .config import ConfigError, lambda_grid, load_config
from .costnoise import ClusterModel, NoisyCostEnv, fit_kmeans
from .environments import CartPole, Pendulum, make_gridworld, read_dataset, substream
from .expert import generate_expert_dataset, train_cvar_expert
from .harness import aggregate, emit_curves, emit_report, evaluate_policy
from .imitation import DivergenceError, ImitationAlgo, KlStepConfig, train
from .risk import RiskConfig

COMMANDS = ("train-expert", "gen-dataset", "fit-noise", "train", "evaluate", "report", "verify")
EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("riskimit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="riskimit", description="Risk-sensitive adversarial imitation learning.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="INI file with [env] [algo] [risk] [optimizer] [run] sections")
    parser.add_argument("--algo", help="shorthand for --algo.variant (gail, rail, js-rs-gail, w-rs-gail)")
    return parser


def parse_overrides(tokens) -> list:
    """``--section.key value`` or ``--section.key=value`` pairs."""
    out, i = [], 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unexpected argument {tok!r}; overrides look like --risk.alpha 0.3")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for {tok}")
            value = tokens[i + 1]
            i += 2
        out.append((key, value))
    return out


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def out_dir(cfg) -> Path:
    return Path(cfg["run"]["out_dir"])


def provenance(cfg, command: str, **extra) -> dict:
    """Reproducibility header; the worker count is left out since results do not depend on it."""
    resolved = dict(cfg, run={k: v for k, v in cfg["run"].items() if k != "workers"})
    d = {"command": command, "config": resolved, "seed": cfg["run"]["seed"]}
    d.update(extra)
    return d


def require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"missing {what}: expected {path}")
    return path


def make_env(cfg, noise: bool = True):
    e = cfg["env"]
    kw = {k: e[k] for k in ("horizon", "gamma") if e[k] is not None}
    if e["name"] == "gridworld":
        env = make_gridworld(**kw)
    elif e["name"] == "cartpole":
        env = CartPole(**kw)
    elif e["name"] == "pendulum":
        env = Pendulum(**kw)
    else:
        raise ConfigError(f"unknown env.name {e['name']!r}")
    if noise and e["cost_noise"] != "none":
        model = ClusterModel.load(require(out_dir(cfg) / "noise_model.json", "noise model (run fit-noise)"))
        env = NoisyCostEnv(env, model, e["cost_noise"])
    return env


def risk_config(cfg, env, lam: float) -> RiskConfig:
    return RiskConfig(alpha=float(cfg["risk"]["alpha"]), lam=lam, gamma=env.spec.gamma)


def single_lambda(cfg) -> float:
    grid = lambda_grid(cfg)
    if len(grid) != 1:
        raise ConfigError("this command needs a single risk.lambda, not a grid")
    return grid[0]


def make_algo(cfg, risk: RiskConfig) -> ImitationAlgo:
    a, o = cfg["algo"], cfg["optimizer"]
    kl = KlStepConfig(max_kl=o["max_kl"], cg_iters=o["cg_iters"], backtrack=o["backtrack"],
                      max_backtracks=o["max_backtracks"], damping=o["damping"])
    return ImitationAlgo(
        variant=a["variant"], risk=risk, entropy_weight=a["entropy_weight"], policy_optimizer=o["policy"],
        generator_steps=a["generator_steps"], discriminator_steps=a["discriminator_steps"],
        pretrain_iters=a["pretrain_iters"], batch_size=a["batch_size"],
        policy_hidden=tuple(a["policy_hidden"]) if a["policy_hidden"] else None,
        disc_hidden=tuple(a["disc_hidden"]) if a["disc_hidden"] else None,
        policy_lr=o["policy_lr"], disc_lr=o["disc_lr"], clip_bound=a["clip_bound"],
        baseline=a["baseline"], tail_rule=a["tail_rule"], kl=kl,
    )


def run_tag(variant: str, lam: float, seed: int) -> str:
    return f"{variant}_lam{lam:g}_seed{seed}"


def write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def read_log(path: Path) -> tuple[dict, list]:
    lines = path.read_text(encoding="utf-8").splitlines()
    return json.loads(lines[0]), [json.loads(ln) for ln in lines[1:]]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train_expert(cfg) -> int:
    env = make_env(cfg)
    risk = risk_config(cfg, env, single_lambda(cfg))
    r = cfg["run"]
    res = train_cvar_expert(env, risk, r["expert_iters"], r["seed"], batch_size=r["expert_batch"],
                            hidden=tuple(r["expert_hidden"]), lr=cfg["optimizer"]["expert_lr"],
                            workers=r["workers"], eval_every=r["expert_eval_every"],
                            eval_trajectories=r["expert_eval_trajectories"])
    path = save_mlp(res.policy, out_dir(cfg) / "expert_policy.json",
                    provenance(cfg, "train-expert", best_iter=res.best_iter, best_rho=res.best_rho))
    print(f"expert policy -> {path} (best iteration {res.best_iter}, evaluated rho {res.best_rho:.6g})")
    return EXIT_OK


def cmd_gen_dataset(cfg) -> int:
    env = make_env(cfg)
    policy, _ = load_checkpoint(require(out_dir(cfg) / "expert_policy.json", "expert policy (run train-expert)"))
    r = cfg["run"]
    path = generate_expert_dataset(policy, env, r["dataset_size"], r["seed"], out_dir(cfg) / "expert_data.jsonl",
                                   header=provenance(cfg, "gen-dataset"), workers=r["workers"])
    print(f"expert dataset -> {path}")
    return EXIT_OK


def cmd_fit_noise(cfg) -> int:
    _, trajs = read_dataset(require(out_dir(cfg) / "expert_data.jsonl", "expert dataset (run gen-dataset)"))
    states = np.concatenate([tr.states[:tr.length] for tr in trajs])
    actions = np.concatenate([tr.actions[:tr.length] for tr in trajs])
    model = fit_kmeans(states, actions, make_env(cfg, noise=False).spec.action_count, k=cfg["run"]["kmeans_k"],
                       rng=substream(cfg["run"]["seed"], 6))
    path = model.save(out_dir(cfg) / "noise_model.json", {"provenance": provenance(cfg, "fit-noise")})
    print(f"cluster model (k={model.k}) -> {path}")
    return EXIT_OK


def load_expert_data(cfg):
    base = out_dir(cfg)
    header, trajs = read_dataset(require(base / "expert_data.jsonl", "expert dataset (run gen-dataset)"))
    pol_path = base / "expert_policy.json"
    if pol_path.is_file():
        policy, _ = load_checkpoint(pol_path)
        if header.get("policy_checksum") not in (None, policy.checksum()):
            log.warning("expert dataset was generated by a different policy than %s", pol_path)
    return trajs


def cmd_train(cfg) -> int:
    env = make_env(cfg)
    expert_data = load_expert_data(cfg)
    r = cfg["run"]
    for lam in lambda_grid(cfg):
        algo = make_algo(cfg, risk_config(cfg, env, lam))
        for i in range(r["n_seeds"]):
            seed = r["seed"] + i
            tag = run_tag(algo.variant, lam, seed)
            base = out_dir(cfg) / "train"
            base.mkdir(parents=True, exist_ok=True)
            log_path = base / f"{tag}.log.jsonl"
            head = {"kind": "training_log", "tag": tag, "variant": algo.variant, "lambda": lam,
                    "train_seed": seed, **provenance(cfg, "train")}
            with log_path.open("w", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(head, sort_keys=True) + "\n")
                try:
                    res = train(algo, env, expert_data, seed, r["iterations"], workers=r["workers"],
                                on_record=lambda rec: fh.write(json.dumps(rec, sort_keys=True) + "\n"))
                except DivergenceError as exc:
                    fh.write(json.dumps({"diverged": str(exc), **exc.record}, sort_keys=True) + "\n")
                    raise
            extra = dict(head, kind="checkpoint")
            save_mlp(res.policy, base / f"{tag}.policy.json", extra)
            save_mlp(res.discriminator, base / f"{tag}.disc.json", extra)
            last = res.records[-1]
            print(f"{tag}: final mean {last['mean']:.6g} cvar {last['cvar_alpha']:.6g} -> {log_path}")
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    env = make_env(cfg)
    base = out_dir(cfg)
    lam = lambda_grid(cfg)[0]
    targets = sorted((base / "train").glob("*.policy.json"))
    if (base / "expert_policy.json").is_file():
        targets.insert(0, base / "expert_policy.json")
    if not targets:
        raise ConfigError(f"nothing to evaluate: no policies under {base}")
    r = cfg["run"]
    for path in targets:
        policy, meta = load_checkpoint(path)
        run_lam = meta.get("lambda", lam)
        stats = evaluate_policy(policy, env, r["eval_trajectories"], risk_config(cfg, env, run_lam), r["seed"],
                                workers=r["workers"])
        name = "expert" if path.name == "expert_policy.json" else path.name[: -len(".policy.json")]
        out = write_json(base / "eval" / f"{name}.json",
                         {"policy": path.name, "statistics": stats, **provenance(cfg, "evaluate", **{"lambda": run_lam})})
        print(f"{name}: " + " ".join(f"{k}={v:.6g}" for k, v in stats.items()) + f" -> {out}")
    return EXIT_OK


def cmd_report(cfg) -> int:
    base = out_dir(cfg)
    logs = sorted((base / "train").glob("*.log.jsonl"))
    if not logs:
        raise ConfigError(f"no training logs under {base / 'train'}")
    runs = {}
    for path in logs:
        head, records = read_log(path)
        records = [rec for rec in records if "diverged" not in rec and rec.get("phase") == "train"]
        runs[(f"{head['variant']}_lam{head['lambda']:g}", head["train_seed"])] = records
        emit_curves(records, base / "curves" / f"{head['tag']}.csv", provenance={"source": path.name})
    r = cfg["run"]
    report = aggregate(runs, r["aggregate_mode"], r["aggregate_k"],
                       r["aggregate_m"] if r["aggregate_mode"] == "top_m_of_last_k" else None)
    fmt = r["report_format"]
    path = emit_report(report, fmt, base / f"report.{fmt}", provenance(cfg, "report"))
    for row in report.rows:
        print(f"{row.algo:28s} {row.criterion:11s} {row.estimate:12.6g} +- {row.ci_halfwidth:.3g}")
    print(f"report -> {path}")
    return EXIT_OK


def cmd_verify(cfg) -> int:
    from .verify import run_all

    results = run_all(seed=cfg["run"]["seed"])
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_VERIFY


HANDLERS = {
    "train-expert": cmd_train_expert,
    "gen-dataset": cmd_gen_dataset,
    "fit-noise": cmd_fit_noise,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, rest = build_parser().parse_known_args(argv)
        overrides = parse_overrides(rest)
        if args.algo:
            overrides.append(("algo.variant", args.algo))
        cfg = load_config(args.config, overrides)
        print(config_mod.dumps({"command": args.command, "config": cfg}), flush=True)
        return HANDLERS[args.command](cfg)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc} {json.dumps(exc.record, sort_keys=True, default=str)}",
              file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
