import hashlib

import numpy as np
import pytest

from offloadrl import cli
from offloadrl.config import (WEIGHT_PRESETS, ConfigError, ExperimentConfig, SweepAxes, dump_config,
                              load_config, write_config)
from offloadrl.dataset import load
from offloadrl.domain import RewardWeights
from offloadrl.experiments import axis_points, load_checkpoint, save_checkpoint
from offloadrl.metrics import read_csv, recompute_reward
from offloadrl.rl import init_params

QUICK = ["--steps", "300", "--conversations", "80"]


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_manifest_roundtrip(tmp_path):
    cfg = ExperimentConfig().with_values("train", penalty=2.5).with_values("generator", seed=9)
    write_config(cfg, tmp_path / "m.ini")
    back = load_config(tmp_path / "m.ini")
    assert back == cfg
    assert dump_config(back) == dump_config(cfg)


def test_unknown_keys_rejected(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\nlearnig_rate = 0.1\n")
    with pytest.raises(ConfigError, match="learnig_rate"):
        load_config(p)
    p.write_text("[trian]\npenalty = 1\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[train]\ntotal_steps = \"many\"\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_fraction_values_and_presets(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[reward]\nbeta_assoc = 1/3\n[sweep]\nlambdas = [0, 5]\n")
    cfg = load_config(p)
    assert cfg.reward.beta_assoc == 1 / 3
    assert cfg.sweep.lambdas == (0.0, 5.0)
    with pytest.raises(ConfigError):
        ExperimentConfig(sweep=SweepAxes(devices=("Cray-1",)))


def test_precedence_flags_over_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\npenalty = 3\ntotal_steps = 77\n")
    args = cli.build_parser().parse_args(["train", "--config", str(p), "--lambda", "0"])
    cfg = cli.resolve_config(args)
    assert cfg.train.penalty == 0.0
    assert cfg.train.total_steps == 77
    assert cfg.train.learning_rate == ExperimentConfig().train.learning_rate


def test_seed_sets_generator_and_training():
    args = cli.build_parser().parse_args(["train", "--seed", "12"])
    cfg = cli.resolve_config(args)
    assert cfg.generator.seed == 12 and cfg.train.seed == 12


def test_weights_flag():
    parse = lambda w: cli.resolve_config(cli.build_parser().parse_args(["train", "--weights", w])).reward
    assert parse("1,0.5,0,0.5") == RewardWeights(1, 0.5, 0, 0.5)
    assert parse("no_cost") == WEIGHT_PRESETS["no_cost"]


def test_weight_presets_cover_tradeoff_rows():
    cfg = ExperimentConfig()
    triples = {name: (c.reward.beta_assoc, c.reward.beta_latency, c.reward.beta_cost)
               for name, c in axis_points(cfg, "weights")}
    assert sorted(triples.values()) == sorted([(0, .5, .5), (.5, 0, .5), (.5, .5, 0), (1 / 3, 1 / 3, 1 / 3)])


def test_default_gap_axis():
    labels = [label for label, _ in axis_points(ExperimentConfig(), "gap")]
    assert labels == ["0.0", "0.1", "0.2", "0.3"]


def test_checkpoint_roundtrip(tmp_path):
    p = init_params(50, 9, 16, np.random.default_rng(0))
    save_checkpoint(p, tmp_path / "c.bin")
    back = load_checkpoint(tmp_path / "c.bin")
    assert all(np.array_equal(p.tensors[k], back.tensors[k]) for k in p.tensors)
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:100])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(tmp_path / "short.bin")


def test_generate_defaults(tmp_path, capsys):
    assert cli.main(["generate", "--out", str(tmp_path)]) == 0
    data = load(tmp_path / "dataset.jsonl")
    assert (data.meta.modality_count, data.meta.task_count) == (3, 4)
    assert "wrote" in capsys.readouterr().out


def test_generate_seed_reproducible(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["generate", "--seed", "7", "--conversations", "100", "--out", str(tmp_path / d)]) == 0
    assert _sha(tmp_path / "a" / "dataset.jsonl") == _sha(tmp_path / "b" / "dataset.jsonl")


def test_generate_scale(tmp_path):
    assert cli.main(["generate", "--conversations", "4000", "--out", str(tmp_path)]) == 0
    n = load(tmp_path / "dataset.jsonl").meta.record_count
    assert 8000 <= n <= 20000


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("OFFLOADRL_OUT", str(tmp_path / "env_root"))
    assert cli.main(["generate", "--conversations", "20"]) == 0
    assert (tmp_path / "env_root" / "dataset.jsonl").exists()


def test_train_manifest_and_rerun(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli.main(["train", "--lambda", "0", *QUICK, "--out", str(out1)]) == 0
    for name in ("checkpoint.bin", "train_log.csv", "manifest.ini"):
        assert (out1 / name).exists()
    cfg = load_config(out1 / "manifest.ini")
    assert cfg.train.penalty == 0.0
    assert cli.main(["train", "--config", str(out1 / "manifest.ini"), "--out", str(out2)]) == 0
    for name in ("checkpoint.bin", "train_log.csv", "manifest.ini"):
        assert _sha(out1 / name) == _sha(out2 / name)


def test_train_on_saved_data(tmp_path):
    assert cli.main(["generate", "--conversations", "60", "--out", str(tmp_path)]) == 0
    data = str(tmp_path / "dataset.jsonl")
    assert cli.main(["train", "--data", data, "--steps", "100", "--out", str(tmp_path / "t")]) == 0
    assert cli.main(["eval", "--data", data, "--checkpoint", str(tmp_path / "t" / "checkpoint.bin"),
                     "--out", str(tmp_path / "e")]) == 0
    assert cli.main(["train", "--data", data, "--gap", "0.1"]) == cli.EXIT_CONFIG


def test_eval_local_baseline(tmp_path, capsys):
    assert cli.main(["eval", "--baseline", "local", "--seeds", "1", "--out", str(tmp_path)]) == 0
    runs = read_csv(tmp_path / "runs.csv")
    assert float(runs[0]["latency_s"]) == pytest.approx(0.011, rel=0.1)
    assert "Latency" in capsys.readouterr().out
    summary = read_csv(tmp_path / "summary.csv")[0]
    assert summary["response_score_sd"] == "nan"     # one seed: no sd


def test_eval_histogram_and_reward_ledger(tmp_path):
    assert cli.main(["eval", "--baseline", "random", "--seeds", "2", "--conversations", "100",
                     "--out", str(tmp_path)]) == 0
    weights = ExperimentConfig().reward
    for seed in (0, 1):
        rows = read_csv(tmp_path / "steps" / f"random_seed{seed}" / "eval_steps.csv")
        run = [r for r in read_csv(tmp_path / "runs.csv") if r["seed"] == str(seed)][0]
        hist = int(run["local"]) + sum(int(run[f"cloud_{m}"]) for m in range(4))
        assert hist == len(rows) == int(run["steps"])
        for r in rows:
            assert float(r["reward"]) == pytest.approx(recompute_reward(r, weights), abs=1e-9)
        assert float(run["reward"]) == pytest.approx(np.mean([float(r["reward"]) for r in rows]), abs=1e-12)


def test_sweep_writes_plot_series(tmp_path):
    assert cli.main(["sweep", "gap", "--values", "0,0.3", "--methods", "rc-a2c,local", "--seeds", "1",
                     *QUICK, "--out", str(tmp_path)]) == 0
    for method in ("rc-a2c", "local"):
        lines = (tmp_path / "plot_data" / "cloud_frac" / f"{method}.tsv").read_text().splitlines()
        assert [ln.split("\t")[0] for ln in lines] == ["0.0", "0.3"]
        assert all(len(ln.split("\t")) == 2 for ln in lines)
    agg = read_csv(tmp_path / "aggregate.csv")
    assert {(a["value"], a["method"]) for a in agg} == {("0.0", "rc-a2c"), ("0.0", "local"),
                                                      ("0.3", "rc-a2c"), ("0.3", "local")}
    assert (tmp_path / "manifest.ini").exists()


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nbogus = 1\n")
    assert cli.main(["train", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--weights", "1,2,3"]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", "budget", "--values", "20"]) == cli.EXIT_CONFIG
    div = tmp_path / "div.ini"
    div.write_text("[train]\nlearning_rate = 1e4\n")
    assert cli.main(["train", "--config", str(div), *QUICK, "--out", str(tmp_path / "d")]) == cli.EXIT_DIVERGED
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--device", "Cray-1"])
    assert exc.value.code == 2
