"""Per-step evaluation logs, run summaries and multi-seed aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import RewardWeights
from .env import OffloadEnv, StepOutcome, compute_reward

STEP_COLUMNS = (
    "conversation_id", "turn_index", "task", "action", "llm", "n_modalities",
    "score", "score_logged", "assoc_sum", "latency_s", "cost_usd",
    "latency_norm", "cost_norm", "reward", "viol_latency", "viol_cost",
)


def step_row(env: OffloadEnv, outcome: StepOutcome, record) -> dict:
    spec = env.actions[outcome.action]
    g_lat, g_cost = outcome.window.relative_g
    return {
        "conversation_id": record.conversation_id,
        "turn_index": record.turn_index,
        "task": record.task,
        "action": outcome.action,
        "llm": spec.llm.value,
        "n_modalities": spec.n_selected,
        "score": outcome.raw_score,
        "score_logged": int(outcome.score_logged),
        "assoc_sum": outcome.raw_association_sum,
        "latency_s": outcome.raw_latency_s,
        "cost_usd": outcome.raw_cost_usd,
        "latency_norm": outcome.latency_norm,
        "cost_norm": outcome.cost_norm,
        "reward": outcome.reward,
        "viol_latency": max(g_lat, 0.0),
        "viol_cost": max(g_cost, 0.0),
    }


def recompute_reward(row: dict, weights: RewardWeights) -> float:
    return compute_reward(weights, float(row["score"]), float(row["assoc_sum"]),
                          float(row["latency_norm"]), float(row["cost_norm"]))


def summarize(rows: Sequence[dict], modality_count: int) -> dict:
    """One run's Table-1 style summary."""
    if not rows:
        raise ValueError("no evaluation steps to summarize")
    col = lambda name: np.array([float(r[name]) for r in rows])
    n = len(rows)
    local = sum(1 for r in rows if r["llm"] == "Local")
    cloud = [sum(1 for r in rows if r["llm"] == "Cloud" and int(r["n_modalities"]) == m)
             for m in range(modality_count + 1)]
    out = {
        "response_score": float(col("score").mean()),
        "latency_s": float(col("latency_s").mean()),
        "cost_usd": float(col("cost_usd").mean()),
        "reward": float(col("reward").mean()),
        "association": float(col("assoc_sum").mean()),
        "local": local,
        **{f"cloud_{m}": c for m, c in enumerate(cloud)},
        "local_frac": local / n,
        **{f"cloud_{m}_frac": c / n for m, c in enumerate(cloud)},
        "cloud_frac": (n - local) / n,
        "viol_latency": float(col("viol_latency").mean()),
        "viol_cost": float(col("viol_cost").mean()),
        "steps": n,
    }
    return out


def summary_columns(modality_count: int) -> list[str]:
    cloud = [f"cloud_{m}" for m in range(modality_count + 1)]
    fracs = [f"cloud_{m}_frac" for m in range(modality_count + 1)]
    return ["response_score", "latency_s", "cost_usd", "reward", "association", "local", *cloud,
            "local_frac", *fracs, "cloud_frac", "viol_latency", "viol_cost", "steps"]


@dataclass
class MetricsReport:
    """Rows of (method, seed, summary) plus mean/sd aggregation across seeds."""

    modality_count: int
    rows: list[dict]

    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r["method"] not in seen:
                seen.append(r["method"])
        return seen

    def aggregate(self) -> list[dict]:
        out = []
        for method in self.methods():
            runs = [r for r in self.rows if r["method"] == method]
            agg = {"method": method, "seeds": len(runs)}
            for c in summary_columns(self.modality_count):
                vals = np.array([float(r[c]) for r in runs])
                agg[c] = float(vals.mean())
                # sd over fewer than 2 seeds is not reported
                agg[c + "_sd"] = float(vals.std(ddof=1)) if len(vals) >= 2 else math.nan
            out.append(agg)
        return out

    def write_runs_csv(self, path) -> None:
        cols = ["method", "seed", *summary_columns(self.modality_count)]
        write_csv(path, cols, self.rows)

    def write_aggregate_csv(self, path) -> None:
        cols = ["method", "seeds"]
        for c in summary_columns(self.modality_count):
            cols += [c, c + "_sd"]
        write_csv(path, cols, self.aggregate())

    def table(self) -> str:
        """Human-readable table with the Table 1 column set (cost in 1e-3 USD)."""
        M = self.modality_count
        head = (f"{'Method':<14}{'Score':>13}{'Latency(s)':>15}{'Cost(1e-3$)':>15}"
                f"{'Reward':>13}{'Local':>8}"
                + "".join(f"{'C' + str(m):>8}" for m in range(M + 1))
                + f"{'ViolLat':>13}{'ViolCost':>13}")
        lines = [head, "-" * len(head)]

        def pm(a, c, scale=1.0, prec=2):
            sd = a[c + "_sd"]
            s = f"{a[c] * scale:.{prec}f}"
            return s + (f"±{sd * scale:.{prec}f}" if not math.isnan(sd) else "")

        for a in self.aggregate():
            lines.append(
                f"{a['method']:<14}{pm(a, 'response_score'):>13}{pm(a, 'latency_s', prec=3):>15}"
                f"{pm(a, 'cost_usd', 1e3):>15}{pm(a, 'reward'):>13}{a['local']:>8.0f}"
                + "".join(f"{a[f'cloud_{m}']:>8.0f}" for m in range(M + 1))
                + f"{pm(a, 'viol_latency'):>13}{pm(a, 'viol_cost'):>13}")
        return "\n".join(lines)


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c, "")) for c in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
