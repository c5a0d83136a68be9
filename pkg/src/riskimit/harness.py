"""Policy evaluation, multi-seed aggregation and report files.

Aggregation follows the usual reporting protocol: statistics of the final
``k`` iterations of each run (or, per criterion, the ``m`` lowest of them),
averaged within a seed and then across seeds, with a half-width of
``1.96 * sd / sqrt(seeds)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .approximator import Mlp, SoftmaxPolicy, rollout_policy
from .environments import Env, sample_trajectories, trajectory_losses
from .risk import RiskConfig, check_alpha, summarize

CRITERIA = ("mean", "var_alpha", "cvar_alpha", "rho_lambda")
REPORT_COLUMNS = ("algo", "criterion", "estimate", "ci_halfwidth")
CURVE_COLUMNS = ("iteration", "criterion", "value")
MODES = ("last_k", "top_m_of_last_k")
DEFAULT_EVAL_TRAJECTORIES = 300


class ReportError(ValueError):
    pass


def min_trajectories(alpha: float) -> int:
    return math.ceil(2.0 / check_alpha(alpha) - 1e-12)


def evaluate_policy(policy, env: Env, n_traj: int, cfg: RiskConfig, seed: int,
                    key: tuple = (5,), workers: int = 1) -> dict:
    """Mean, VaR, CVaR and rho of the true loss over ``n_traj`` fresh rollouts."""
    if n_traj < min_trajectories(cfg.alpha):
        raise ReportError(f"n_traj={n_traj} cannot resolve an alpha={cfg.alpha} tail; "
                          f"need at least {min_trajectories(cfg.alpha)}")
    if isinstance(policy, Mlp):
        policy = SoftmaxPolicy(policy)
    policy = rollout_policy(policy, env)
    trajs = sample_trajectories(env, policy, n_traj, seed, key=key, workers=workers)
    stats = summarize(trajectory_losses(trajs), cfg)
    stats["n_traj"] = n_traj
    return stats


@dataclass(frozen=True)
class ReportRow:
    algo: str
    criterion: str
    estimate: float
    ci_halfwidth: float


@dataclass
class EvaluationReport:
    rows: list
    mode: str = "last_k"
    k: int = 100
    m: int | None = None
    per_seed: dict = field(default_factory=dict)

    def lookup(self, algo: str, criterion: str) -> ReportRow:
        for row in self.rows:
            if row.algo == algo and row.criterion == criterion:
                return row
        raise KeyError((algo, criterion))


def run_summary(records: Sequence[Mapping], criterion: str, mode: str, k: int, m: int | None = None) -> float:
    """One seed's value of ``criterion`` under the aggregation mode."""
    if mode not in MODES:
        raise ReportError(f"mode must be one of {MODES}, got {mode!r}")
    if k < 1 or k > len(records):
        raise ReportError(f"k={k} but the run has {len(records)} iterations")
    tail = np.array([r[criterion] for r in records[-k:]], dtype=np.float64)
    if mode == "last_k":
        return float(np.mean(tail))
    if m is None or m < 1 or m > k:
        raise ReportError(f"m must lie in [1, k={k}], got {m}")
    return float(np.mean(np.sort(tail)[:m]))


def confidence_halfwidth(values: Sequence[float]) -> float:
    """1.96 * sample sd / sqrt(n); zero for a single seed.  Order-independent bit for bit."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size < 2:
        return 0.0
    return float(1.96 * np.std(v, ddof=1) / math.sqrt(v.size))


def aggregate(runs: Mapping[tuple, Sequence[Mapping]], mode: str = "last_k", k: int = 100,
              m: int | None = None, criteria: Sequence[str] = CRITERIA) -> EvaluationReport:
    """Aggregate per-iteration records keyed by ``(algo, seed)``.

    Selection happens per seed and per criterion; seeds are then averaged.
    """
    by_algo: dict = {}
    for (algo, seed), records in runs.items():
        by_algo.setdefault(algo, {})[seed] = records
    rows, per_seed = [], {}
    for algo in sorted(by_algo):
        seeds = sorted(by_algo[algo])
        for crit in criteria:
            vals = [run_summary(by_algo[algo][s], crit, mode, k, m) for s in seeds]
            per_seed[(algo, crit)] = dict(zip(seeds, vals))
            rows.append(ReportRow(algo, crit, float(math.fsum(vals) / len(vals)), confidence_halfwidth(vals)))
    return EvaluationReport(rows, mode, k, m, per_seed)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return "%.17g" % x


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
    return path


def _csv_text(columns, rows, provenance: dict | None) -> str:
    buf = io.StringIO()
    if provenance is not None:
        buf.write("# " + json.dumps(provenance, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def emit_report(report: EvaluationReport, fmt: str, path, provenance: dict | None = None) -> Path:
    """Write ``{algo, criterion, estimate, ci_halfwidth}`` rows as CSV or JSON.

    CSV numbers use 17 significant digits; an optional provenance record goes
    on a leading ``#`` line.
    """
    path = Path(path)
    if fmt == "csv":
        rows = [(r.algo, r.criterion, _fmt(r.estimate), _fmt(r.ci_halfwidth)) for r in report.rows]
        return _write(path, _csv_text(REPORT_COLUMNS, rows, provenance))
    if fmt == "json":
        payload = {
            "columns": list(REPORT_COLUMNS),
            "mode": report.mode,
            "k": report.k,
            "m": report.m,
            "rows": [dict(zip(REPORT_COLUMNS, (r.algo, r.criterion, r.estimate, r.ci_halfwidth)))
                     for r in report.rows],
        }
        if provenance is not None:
            payload["provenance"] = provenance
        return _write(path, json.dumps(payload, sort_keys=True, indent=1) + "\n")
    raise ReportError(f"format must be csv or json, got {fmt!r}")


def read_report(path) -> list:
    """Rows of a CSV or JSON report as ``ReportRow`` values."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return [ReportRow(r["algo"], r["criterion"], float(r["estimate"]), float(r["ci_halfwidth"]))
                for r in json.loads(text)["rows"]]
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return [ReportRow(r["algo"], r["criterion"], float(r["estimate"]), float(r["ci_halfwidth"])) for r in reader]


def emit_curves(records: Sequence[Mapping], path, criteria: Sequence[str] = CRITERIA,
                provenance: dict | None = None) -> Path:
    """Plot-ready long-format CSV of one run: iteration, criterion, value."""
    rows = [(r["iter"], c, _fmt(r[c])) for r in records for c in criteria]
    return _write(Path(path), _csv_text(CURVE_COLUMNS, rows, provenance))
