"""Command-line entry point: ``offloadrl {generate,train,eval,sweep}``.

Exit codes: 0 success, 2 configuration or input error, 3 training divergence.
The output root is ``--out``, else ``$OFFLOADRL_OUT``, else ``./runs``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import dataset as ds_mod
from .baselines import BASELINES
from .config import WEIGHT_PRESETS, ConfigError, ExperimentConfig, load_config, write_config
from .costs import DEVICES
from .dataset import DatasetFormatError
from .domain import RewardWeights
from .experiments import (RL_METHOD, SWEEP_AXES, env_factory, evaluate_method, get_dataset,
                          load_checkpoint, run_methods, save_checkpoint, sweep)
from .metrics import STEP_COLUMNS, MetricsReport, write_csv
from .rl import LOG_COLUMNS, NonFiniteLoss, TrainingDiverged, train

log = logging.getLogger("offloadrl")

OUT_ENV = "OFFLOADRL_OUT"
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="INI config file (flags override it)")
    g.add_argument("--seed", type=int, help="seed for both data generation and training")
    g.add_argument("--seeds", type=int, help="number of seeds per method (default 3)")
    g.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    g.add_argument("--lambda", dest="lam", type=float, help="constraint penalty coefficient")
    g.add_argument("--device", choices=sorted(DEVICES), metavar="NAME", help="local device profile")
    g.add_argument("--weights", help="reward weights a,bA,bL,bC or a preset name")
    g.add_argument("--latency-budget", type=float, help="latency budget per window (s)")
    g.add_argument("--cost-budget", type=float, help="usage-cost budget per window (USD)")
    g.add_argument("--gap", type=float, help="local-model quality gap of the generator")
    g.add_argument("--data", help="use this dataset file instead of generating one")
    g.add_argument("--steps", type=int, help="training steps")
    g.add_argument("--conversations", type=int, help="conversations to generate")
    g.add_argument("--workers", type=int, help="parallel worker processes for multi-run commands")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offloadrl",
                                     description="Local/cloud LLM offloading with constrained A2C.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dialogue dataset")
    _common(p)
    p.add_argument("--file", help="output file (default <out>/dataset.jsonl)")

    p = sub.add_parser("train", help="train a policy; writes checkpoint, log and manifest")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint, a baseline, or every configured method")
    _common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint", help="trained policy checkpoint")
    src.add_argument("--baseline", choices=BASELINES + (RL_METHOD,), help="single method to run")

    p = sub.add_parser("sweep", help="run one sweep axis across methods and seeds")
    _common(p)
    p.add_argument("axis", choices=SWEEP_AXES)
    p.add_argument("--values", help="comma-separated axis values overriding the configured list")
    p.add_argument("--methods", help="comma-separated methods (default from config)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    """Defaults, then --config file, then flags."""
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_values("generator", seed=args.seed).with_values("train", seed=args.seed)
    if args.seeds is not None:
        cfg = cfg.with_values("run", seeds=args.seeds)
    if args.lam is not None:
        cfg = cfg.with_values("train", penalty=args.lam)
    if args.device is not None:
        cfg = cfg.with_values("generator", device=args.device)
    if args.weights is not None:
        cfg = cfg.replace(reward=_weights(args.weights))
    if args.latency_budget is not None:
        cfg = cfg.with_values("budget", latency_budget=args.latency_budget)
    if args.cost_budget is not None:
        cfg = cfg.with_values("budget", cost_budget=args.cost_budget)
    if args.gap is not None:
        cfg = cfg.with_values("generator", local_quality_gap=args.gap)
    if args.data is not None:
        cfg = cfg.with_values("run", data=args.data)
    if args.steps is not None:
        cfg = cfg.with_values("train", total_steps=args.steps)
    if args.conversations is not None:
        cfg = cfg.with_values("generator", conversations=args.conversations)
    if args.workers is not None:
        cfg = cfg.with_values("run", workers=args.workers)
    if cfg.run.data and (args.device is not None or args.gap is not None):
        raise ConfigError("--device and --gap shape generated data; they cannot be combined with --data")
    return cfg


def _weights(text: str) -> RewardWeights:
    if text in WEIGHT_PRESETS:
        return WEIGHT_PRESETS[text]
    try:
        return RewardWeights.parse(text)
    except ValueError as exc:
        raise ConfigError(f"--weights: {exc}") from None


def out_root(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "runs")


# -- subcommands ---------------------------------------------------------------

def cmd_generate(args, cfg: ExperimentConfig) -> int:
    if cfg.run.data:
        raise ConfigError("generate does not take --data")
    path = Path(args.file) if args.file else out_root(args) / "dataset.jsonl"
    data = ds_mod.generate(cfg.generator)
    ds_mod.save(data, path)
    m = data.meta
    print(f"wrote {m.record_count} records to {path}")
    print(json.dumps({"modality_count": m.modality_count, "task_count": m.task_count,
                      "record_count": m.record_count, "train_conversations": len(data.train),
                      "test_conversations": len(data.test)}, sort_keys=True))
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    out = out_root(args)
    every = max(cfg.train.total_steps // 20, 1)

    def progress(step, row):
        if step % every < cfg.train.batch_size:
            log.info("step %d loss %.4f reward %.4f g_lat %.4f g_cost %.4f", step, row["loss"],
                     row["mean_reward"], row["g_latency"], row["g_cost"])

    data = get_dataset(cfg)
    res = train(data.train, env_factory(cfg, data), cfg.train, progress)
    save_checkpoint(res.params, out / "checkpoint.bin")
    write_csv(out / "train_log.csv", LOG_COLUMNS, res.log)
    write_config(cfg, out / "manifest.ini")
    last = res.log[-1]
    print(f"trained {cfg.train.total_steps} steps (seed {cfg.train.seed}); final loss "
          f"{last['loss']:.4f}; wrote {out}/checkpoint.bin, train_log.csv, manifest.ini")
    return 0


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    out = out_root(args)
    data = get_dataset(cfg)
    mc = data.meta.modality_count
    rows = []
    if args.checkpoint:
        params = _load_params(args.checkpoint, cfg)
        summary, steps = evaluate_method(cfg, RL_METHOD, cfg.train.seed, params)
        write_csv(out / "steps" / f"{RL_METHOD}_checkpoint.csv", STEP_COLUMNS, steps)
        rows.append({"method": RL_METHOD, "seed": cfg.train.seed, **summary})
        report = MetricsReport(mc, rows)
    else:
        methods = [args.baseline] if args.baseline else list(cfg.run.methods)
        report = run_methods(cfg, methods, out / "steps")
    report.write_runs_csv(out / "runs.csv")
    report.write_aggregate_csv(out / "summary.csv")
    write_config(cfg, out / "manifest.ini")
    print(report.table())
    return 0


def _load_params(path, cfg: ExperimentConfig):
    try:
        params = load_checkpoint(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    env = env_factory(cfg)()
    if (params.state_dim, params.n_actions) != (env.state_dim, env.n_actions):
        raise ConfigError(f"checkpoint expects state dim {params.state_dim} and {params.n_actions} "
                          f"actions; dataset gives {env.state_dim} and {env.n_actions}")
    return params


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    if args.values:
        cfg = _override_axis(cfg, args.axis, [v.strip() for v in args.values.split(",") if v.strip()])
    methods = None
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        bad = [m for m in methods if m not in BASELINES + (RL_METHOD,)]
        if bad:
            raise ConfigError(f"unknown methods {bad}")
    out = out_root(args)
    agg = sweep(cfg, args.axis, out, methods)
    print(f"{'value':<14}{'method':<10}{'reward':>10}{'score':>9}{'latency':>10}"
          f"{'cost(1e-3$)':>13}{'cloud':>8}{'viol_lat':>10}{'viol_cost':>10}")
    for a in agg:
        print(f"{a['value']:<14}{a['method']:<10}{a['reward']:>10.4f}{a['response_score']:>9.4f}"
              f"{a['latency_s']:>10.3f}{a['cost_usd'] * 1e3:>13.3f}{a['cloud_frac']:>8.3f}"
              f"{a['viol_latency']:>10.4f}{a['viol_cost']:>10.4f}")
    print(f"wrote {out}/runs.csv, aggregate.csv, plot_data/")
    return 0


def _override_axis(cfg: ExperimentConfig, axis: str, values: list[str]) -> ExperimentConfig:
    try:
        if axis == "lambda":
            return cfg.with_values("sweep", lambdas=tuple(float(v) for v in values))
        if axis == "gap":
            return cfg.with_values("sweep", gaps=tuple(float(v) for v in values))
        if axis == "budget":
            pairs = []
            for v in values:
                lat, cost = v.split(":")
                pairs.append((float(lat), float(cost)))
            return cfg.with_values("sweep", budgets=tuple(pairs))
    except ValueError:
        raise ConfigError(f"cannot parse --values for the {axis} axis: {values}") from None
    if axis == "device":
        return cfg.replace(sweep=_checked_sweep(cfg, devices=tuple(values)))
    return cfg.replace(sweep=_checked_sweep(cfg, weights=tuple(values)))


def _checked_sweep(cfg: ExperimentConfig, **values):
    new = dataclasses.replace(cfg.sweep, **values)
    ExperimentConfig(sweep=new)     # validates names
    return new


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, NonFiniteLoss) as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        # dataclass validation of out-of-range settings
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
