import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from offloadrl.costs import (DEVICES, CloudRates, CostModel, EnergyPricing, LocalWorkload, NormBounds,
                             association, cloud_cost, get_device, load_device_table, load_embeddings,
                             local_cost, local_latency, minmax_normalize)
from offloadrl.dataset import GeneratorConfig, generate
from offloadrl.domain import DeviceProfile

# 2 * 3.8e9 * 500 / 250 = 1.52e10 FLOPs
W = LocalWorkload(model_params=3.8e9, total_tokens=500, ref_tokens=250)


def test_latency_table_values():
    assert W.flops == pytest.approx(1.52e10)
    assert local_latency(W, get_device("Jetson TX2")) == pytest.approx(0.01143, abs=5e-6)
    assert local_latency(W, get_device("Raspberry Pi-4B")) == pytest.approx(1.12593, abs=5e-6)


def test_latency_linear_in_tokens():
    d = get_device("Jetson Nano")
    doubled = LocalWorkload(W.model_params, 2 * W.total_tokens, W.ref_tokens)
    assert local_latency(doubled, d) == 2 * local_latency(W, d)


def test_latency_times_flops_invariant():
    vals = [local_latency(W, d) * d.peak_flops for d in DEVICES.values()]
    assert np.ptp(vals) <= 1e-12 * max(vals)


def test_zero_peak_rejected():
    d = object.__new__(DeviceProfile)
    object.__setattr__(d, "name", "broken")
    object.__setattr__(d, "peak_tflops", 0.0)
    object.__setattr__(d, "max_watts", 1.0)
    with pytest.raises(ValueError):
        local_latency(W, d)


def test_local_cost_values():
    pi4 = DeviceProfile("pi", 0.0135, 8)
    tx2 = DeviceProfile("tx2", 1.33, 15)
    assert local_cost(1.12593, pi4, EnergyPricing(4.63e-8)) == pytest.approx(4.17e-7, rel=1e-3)
    assert local_cost(0.01143, tx2) == pytest.approx(7.94e-9, rel=1e-3)
    assert local_cost(0.0, tx2) == 0.0
    with pytest.raises(ValueError):
        local_cost(-1.0, tx2)


def test_cloud_cost_values():
    assert cloud_cost(1000, 1000, {}) == pytest.approx(0.020, abs=1e-15)
    assert cloud_cost(0, 0, {}) == 0.0
    base = cloud_cost(300, 200, {})
    rates = CloudRates(modality_rates=(0.003, 0.0, 0.0))
    assert cloud_cost(300, 200, {0: 1.0}, rates) == base + 0.003


def test_cloud_cost_rejects_unselected_size():
    with pytest.raises(ValueError):
        cloud_cost(10, 10, {1: 1.0}, selected=[0])
    cloud_cost(10, 10, {0: 1.0}, selected=[0])


@given(st.integers(0, 5000), st.integers(0, 5000), st.integers(0, 2000), st.integers(0, 2000),
       st.lists(st.floats(0, 10), min_size=3, max_size=3))
def test_cloud_cost_monotone(p, r, dp, dr, sizes):
    a = cloud_cost(p, r, dict(enumerate(sizes)))
    b = cloud_cost(p + dp, r + dr, dict(enumerate(s * 1.5 for s in sizes)))
    assert b >= a


def test_association_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert association(v, v) == pytest.approx(1.0)
    assert association([1, 0], [0, 1]) == 0.0
    assert association([1, 0], [1, 1]) == pytest.approx(0.70711, abs=1e-5)
    with pytest.raises(ValueError):
        association([0, 0], [1, 1])


vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=4).filter(
    lambda x: np.linalg.norm(x) > 1e-3)


@given(vec, vec, st.floats(1e-3, 1e3))
def test_association_scale_invariant(u, v, c):
    assert association(np.multiply(c, u), v) == pytest.approx(association(u, v), abs=1e-9)


def test_minmax():
    assert minmax_normalize(2.0, 2.0, 4.0) == 0.0
    assert minmax_normalize(4.0, 2.0, 4.0) == 1.0
    with pytest.raises(ValueError):
        minmax_normalize(1.0, 3.0, 3.0)


def test_test_split_outlier_clamps():
    # seed 3: the test split holds a cloud request slower than anything in training
    data = generate(GeneratorConfig(seed=3, conversations=200))
    b = data.meta.bounds
    outliers = [r for r in data.test_records if r.latency_s > b.latency_max]
    assert outliers
    for r in outliers:
        assert b.latency(r.latency_s) == 1.0
    for r in data.test_records:
        assert 0.0 <= b.latency(r.latency_s) <= 1.0
        assert 0.0 <= b.cost(r.cost_usd) <= 1.0


def test_norm_bounds_validate():
    with pytest.raises(ValueError):
        NormBounds(1.0, 0.5, 0.0, 1.0)


def test_cost_model_local_matches_functions():
    d = get_device("Jetson TX2")
    cm = CostModel(d, model_params=3.8e9, ref_tokens=250)
    lat, cost = cm.local(200, 300)
    assert lat == local_latency(W, d)
    assert cost == local_cost(lat, d)
    assert math.isclose(cm.cloud(1000, 1000, (0, 0, 0), (1, 1, 1)), 0.02)


def test_device_table_file(tmp_path):
    p = tmp_path / "devices.csv"
    p.write_text("name,TFLOPS,Watts,extra\nboard,2.5,7,x\n")
    table = load_device_table(p)
    assert table["board"] == DeviceProfile("board", 2.5, 7.0)
    (tmp_path / "bad.csv").write_text("name,Watts\nx,1\n")
    with pytest.raises(ValueError):
        load_device_table(tmp_path / "bad.csv")


def test_embedding_file(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("# id then components\nprompt 1 0\nview 1,1\n")
    emb = load_embeddings(p)
    assert association(emb["prompt"], emb["view"]) == pytest.approx(0.70711, abs=1e-5)
    (tmp_path / "bad.txt").write_text("a 1 2\nb 1\n")
    with pytest.raises(ValueError, match=":2:"):
        load_embeddings(tmp_path / "bad.txt")
