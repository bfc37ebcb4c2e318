"""Run orchestration: datasets, training/evaluation runs, sweeps and checkpoints."""

from __future__ import annotations

import dataclasses
import functools
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataset as ds_mod
from .baselines import make_baseline
from .config import WEIGHT_PRESETS, ConfigError, ExperimentConfig, write_config
from .dataset import Dataset, GeneratorConfig
from .domain import ConstraintBudget, RewardWeights
from .env import make_env_factory
from .metrics import STEP_COLUMNS, MetricsReport, summarize, write_csv
from .rl import (LOG_COLUMNS, PARAM_NAMES, GreedyPolicy, PolicyParams, TrainConfig, TrainResult,
                 run_policy, train)

log = logging.getLogger(__name__)

RL_METHOD = "rc-a2c"
SWEEP_AXES = ("lambda", "budget", "device", "gap", "weights")

# -- checkpoints ---------------------------------------------------------------

MAGIC = b"OFFLDRL\x01"


def save_checkpoint(params: PolicyParams, path) -> None:
    """Little-endian binary: magic, tensor count, then (name, shape, float64 data) per tensor."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(PARAM_NAMES)))
        for name in PARAM_NAMES:
            t = np.ascontiguousarray(params.tensors[name], dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(t.tobytes())


def load_checkpoint(path) -> PolicyParams:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a policy checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (n,) = take("<H")
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        size = int(np.prod(shape)) * 8
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        tensors[name] = np.frombuffer(data, "<f8", int(np.prod(shape)), pos).reshape(shape).astype(float)
        pos += size
    missing = set(PARAM_NAMES) - set(tensors)
    if missing:
        raise ValueError(f"{path}: checkpoint missing tensors {sorted(missing)}")
    return PolicyParams({k: tensors[k] for k in PARAM_NAMES})


# -- datasets and environments -------------------------------------------------

@functools.lru_cache(maxsize=8)
def _generated(gen: GeneratorConfig) -> Dataset:
    return ds_mod.generate(gen)


@functools.lru_cache(maxsize=4)
def _loaded(path: str) -> Dataset:
    return ds_mod.load(path)


def get_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.run.data:
        return _loaded(str(Path(cfg.run.data).resolve()))
    return _generated(cfg.generator)


@functools.lru_cache(maxsize=16)
def _factory(data: Dataset, weights: RewardWeights, budget: ConstraintBudget, k: int, score_mode: str):
    return make_env_factory(data, weights, budget, k, score_mode)


def env_factory(cfg: ExperimentConfig, data: Dataset | None = None):
    data = data if data is not None else get_dataset(cfg)
    return _factory(data, cfg.reward, cfg.budget, cfg.train.k, cfg.run.score_mode)


# -- single runs ---------------------------------------------------------------

def train_policy(cfg: ExperimentConfig, seed: int | None = None) -> TrainResult:
    data = get_dataset(cfg)
    tcfg = cfg.train if seed is None else dataclasses.replace(cfg.train, seed=seed)
    return train(data.train, env_factory(cfg, data), tcfg)


def evaluate_method(cfg: ExperimentConfig, method: str, seed: int,
                    params: PolicyParams | None = None) -> tuple[dict, list[dict]]:
    """Evaluate one method on the test split; returns (summary, per-step rows)."""
    data = get_dataset(cfg)
    env = env_factory(cfg, data)()
    mc, tc = data.meta.modality_count, data.meta.task_count
    if method == RL_METHOD:
        if params is None:
            params = train_policy(cfg, seed).params
        agent = GreedyPolicy(params)
    else:
        agent = make_baseline(method, mc, tc, seed, cfg.run.ucb_exploration)
        if method == "ucb":
            run_policy(agent, data.train, env)    # online warm-up over the training split
    rows = run_policy(agent, data.test, env)
    return summarize(rows, mc), rows


def run_seed(cfg: ExperimentConfig, method: str, seed: int, run_dir: Path | None = None) -> dict:
    """One (method, seed) run; optionally writes its raw logs under ``run_dir``."""
    params, train_log = None, None
    if method == RL_METHOD:
        res = train_policy(cfg, seed)
        params, train_log = res.params, res.log
    summary, rows = evaluate_method(cfg, method, seed, params)
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        write_csv(run_dir / "eval_steps.csv", STEP_COLUMNS, rows)
        if train_log is not None:
            write_csv(run_dir / "train_log.csv", LOG_COLUMNS, train_log)
            save_checkpoint(params, run_dir / "checkpoint.bin")
    return {"method": method, "seed": seed, **summary}


def seeds_for(cfg: ExperimentConfig) -> list[int]:
    return [cfg.train.seed + i for i in range(cfg.run.seeds)]


def run_methods(cfg: ExperimentConfig, methods: Sequence[str] | None = None,
                out_dir: Path | None = None) -> MetricsReport:
    methods = list(methods or cfg.run.methods)
    jobs = [(cfg, m, s, None if out_dir is None else out_dir / f"{m}_seed{s}")
            for m in methods for s in seeds_for(cfg)]
    rows = _map_jobs(jobs, cfg.run.workers)
    return MetricsReport(get_dataset(cfg).meta.modality_count, rows)


def _job(args):
    return run_seed(*args)


def _map_jobs(jobs, workers: int):
    if workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


# -- sweeps --------------------------------------------------------------------

def axis_points(cfg: ExperimentConfig, axis: str) -> list[tuple[str, ExperimentConfig]]:
    """(label, config) for each point of a sweep axis."""
    s = cfg.sweep
    if axis == "lambda":
        return [(repr(float(v)), cfg.with_values("train", penalty=float(v))) for v in s.lambdas]
    if axis == "budget":
        return [(f"{lat!r}:{cost!r}", cfg.with_values("budget", latency_budget=float(lat),
                                                      cost_budget=float(cost)))
                for lat, cost in s.budgets]
    if axis == "device":
        return [(name, cfg.with_values("generator", device=name)) for name in s.devices]
    if axis == "gap":
        return [(repr(float(g)), cfg.with_values("generator", local_quality_gap=float(g)))
                for g in s.gaps]
    if axis == "weights":
        return [(name, cfg.replace(reward=WEIGHT_PRESETS[name])) for name in s.weights]
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


PLOT_METRICS = ("response_score", "reward", "latency_s", "cost_usd", "association",
                "cloud_frac", "viol_latency", "viol_cost")


def sweep(cfg: ExperimentConfig, axis: str, out_dir: Path | None = None,
          methods: Sequence[str] | None = None) -> list[dict]:
    """Runs every (axis value x method x seed); returns aggregated rows.

    With ``out_dir``: per-run subdirectories, ``runs.csv``, ``aggregate.csv``
    and ``plot_data/<metric>/<method>.tsv`` two-column (x, mean) series.
    """
    if cfg.run.data and axis in ("gap", "device"):
        raise ConfigError(f"the {axis} sweep regenerates data and cannot use a fixed --data file")
    methods = list(methods or cfg.run.methods)
    points = axis_points(cfg, axis)
    jobs, labels = [], []
    for label, pcfg in points:
        for m in methods:
            for s in seeds_for(pcfg):
                run_dir = None if out_dir is None else out_dir / "runs" / _safe(f"{axis}={label}") / f"{m}_seed{s}"
                jobs.append((pcfg, m, s, run_dir))
                labels.append(label)
    rows = _map_jobs(jobs, cfg.run.workers)
    for r, label in zip(rows, labels):
        r["axis"], r["value"] = axis, label
    mc = get_dataset(points[0][1]).meta.modality_count
    agg = []
    for label, _ in points:
        report = MetricsReport(mc, [r for r in rows if r["value"] == label])
        for a in report.aggregate():
            agg.append({"axis": axis, "value": label, **a})
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        cols = list(MetricsReport(mc, rows).rows[0].keys())
        write_csv(out_dir / "runs.csv", ["axis", "value"] + [c for c in cols if c not in ("axis", "value")], rows)
        write_csv(out_dir / "aggregate.csv", list(agg[0].keys()), agg)
        write_plot_data(agg, methods, out_dir / "plot_data")
        write_config(cfg, out_dir / "manifest.ini")
    return agg


def write_plot_data(agg: list[dict], methods: Sequence[str], root: Path) -> None:
    for metric in PLOT_METRICS:
        for sd in (False, True):
            name = metric + ("_sd" if sd else "")
            d = root / name
            d.mkdir(parents=True, exist_ok=True)
            for m in methods:
                with open(d / f"{m}.tsv", "w", encoding="utf-8") as fh:
                    for a in agg:
                        if a["method"] == m:
                            fh.write(f"{a['value']}\t{a[name]!r}\n")


def _safe(text: str) -> str:
    return "".join(c if c.isalnum() or c in "=.:-_" else "_" for c in text).replace(":", "_")
