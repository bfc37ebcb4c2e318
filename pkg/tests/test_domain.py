import pytest
from hypothesis import given
from hypothesis import strategies as st

from offloadrl.domain import (ActionSpec, ConstraintBudget, DeviceProfile, LLMChoice, RewardWeights,
                              action_count, action_index, enumerate_actions)


def test_action_space_sizes():
    acts = enumerate_actions(3)
    assert len(acts) == 9
    assert acts[0] == ActionSpec.local(3)
    assert len(enumerate_actions(1)) == 3


def test_binary_order():
    acts = enumerate_actions(3)
    assert acts[1] == ActionSpec(LLMChoice.CLOUD, (0, 0, 0))
    assert acts[2] == ActionSpec(LLMChoice.CLOUD, (1, 0, 0))
    assert acts[8] == ActionSpec(LLMChoice.CLOUD, (1, 1, 1))


def test_fixed_indices():
    assert action_index(ActionSpec.local(3), 3) == 0
    assert action_index(ActionSpec.cloud((0, 0, 0)), 3) == 1


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_bijection(m):
    acts = enumerate_actions(m)
    assert [action_index(a, m) for a in acts] == list(range(1 + 2 ** m))
    assert len(set(acts)) == action_count(m)


@given(st.integers(1, 6), st.data())
def test_cloud_flags_roundtrip(m, data):
    flags = tuple(data.draw(st.lists(st.integers(0, 1), min_size=m, max_size=m)))
    a = ActionSpec.cloud(flags)
    assert enumerate_actions(m)[action_index(a, m)] == a


def test_local_with_modalities_rejected():
    with pytest.raises(ValueError):
        ActionSpec(LLMChoice.LOCAL, (1, 0, 0))
    ActionSpec(LLMChoice.LOCAL, (0, 0, 0))


@pytest.mark.parametrize("m", [0, 17])
def test_modality_count_guard(m):
    with pytest.raises(ValueError):
        enumerate_actions(m)


def test_index_rejects_wrong_width():
    with pytest.raises(ValueError):
        action_index(ActionSpec.cloud((1, 0)), 3)


def test_reward_weights_parse():
    w = RewardWeights.parse("1,1/3,1/3,1/3")
    assert w.beta_cost == pytest.approx(1 / 3, abs=0)
    assert RewardWeights.parse(w.as_text()) == w
    with pytest.raises(ValueError):
        RewardWeights.parse("1,2")
    with pytest.raises(ValueError):
        RewardWeights(1.0, -0.1, 0.0, 0.0)


def test_budget_and_device_invariants():
    with pytest.raises(ValueError):
        ConstraintBudget(0.0, 0.05, 5)
    with pytest.raises(ValueError):
        ConstraintBudget(30.0, 0.05, 0)
    with pytest.raises(ValueError):
        DeviceProfile("x", 0.0, 5.0)
    assert DeviceProfile("x", 2.0, 5.0).peak_flops == 2e12
