import dataclasses

import numpy as np
import pytest

from offloadrl.domain import ActionSpec, ConstraintBudget, RewardWeights, action_index
from offloadrl.env import (BudgetWindow, OffloadEnv, StateEncoder, compute_reward, make_env_factory,
                           update_budget)

ENC = StateEncoder(5, 3, 4)
SLOT = 3 + 3 + 4


def _slots(state):
    return state.vector.reshape(5, SLOT)


def _conv(data, turns):
    return next(c for c in data.train if len(c) == turns)


def test_reset_pads_history(small_factory, small_data):
    env = small_factory()
    conv = _conv(small_data, 3)
    s = env.reset(conv)
    slots = _slots(s)
    assert s.vector.shape == (50,)
    for row in slots[:4]:
        assert row[0] == 1 and not row[1:].any()
    cur = slots[4]
    assert not cur[:6].any()
    assert np.flatnonzero(cur[6:]).tolist() == [conv[0].task]
    assert np.array_equal(env.reset(conv).vector, s.vector)


def test_reset_empty_rejected(small_factory):
    with pytest.raises(ValueError):
        small_factory().reset(())


def test_history_slot_reflects_action(small_factory, small_data):
    env = small_factory()
    conv = _conv(small_data, 4)
    env.reset(conv)
    out = env.step(ActionSpec.cloud((1, 0, 1)))
    prev = _slots(out.next_state)[3]
    assert prev[:3].tolist() == [0, 0, 1]
    assert prev[3:6].tolist() == [1, 0, 1]
    assert np.flatnonzero(prev[6:]).tolist() == [conv[0].task]
    out = env.step(ActionSpec.local(3))
    prev = _slots(out.next_state)[3]
    assert prev[:6].tolist() == [0, 1, 0, 0, 0, 0]
    assert np.flatnonzero(_slots(out.next_state)[4][6:]).tolist() == [conv[2].task]


def test_history_drops_oldest():
    s = ENC.encode((), 0)
    for t in range(6):
        s = ENC.advance(s, t % 9, (t + 1) % 4)
    assert len(s.history) == 4
    assert s.history[0] == (2, 2)


def test_reward_arithmetic():
    w = RewardWeights(1.0, 0.0, 0.0, 0.0)
    assert compute_reward(w, 1.0, 0.7, 0.4, 0.9) == 1.0
    third = RewardWeights(1.0, 1 / 3, 1 / 3, 1 / 3)
    assert compute_reward(third, 1.0, 0.6, 0.3, 0.3) == pytest.approx(1.0, abs=1e-12)


def test_reward_linear_in_latency_weight(small_data):
    base_w = RewardWeights(1.0, 1 / 3, 0.2, 1 / 3)
    double = dataclasses.replace(base_w, beta_latency=0.4)
    conv = _conv(small_data, 3)
    outs = []
    for w in (base_w, double):
        env = make_env_factory(small_data, w, ConstraintBudget())()
        env.reset(conv)
        outs.append(env.step(5))
    a, b = outs
    assert b.reward - a.reward == pytest.approx(-0.2 * a.latency_norm, abs=1e-12)


def test_local_action_has_no_association(small_factory, small_data):
    env = small_factory()
    env.reset(_conv(small_data, 2))
    out = env.step(0)
    assert out.raw_association_sum == 0.0


def test_logged_action_uses_recorded_values(small_factory, small_data):
    env = small_factory()
    conv = _conv(small_data, 3)
    env.reset(conv)
    logged = action_index(conv[0].action, 3)
    out = env.step(logged)
    assert out.score_logged
    assert out.raw_score == conv[0].response_score
    assert (out.raw_latency_s, out.raw_cost_usd) == (conv[0].latency_s, conv[0].cost_usd)


def test_counterfactual_action_uses_estimator(small_factory, small_data):
    env = small_factory()
    conv = _conv(small_data, 3)
    s = env.reset(conv)
    other = (action_index(conv[0].action, 3) + 1) % 9
    out = env.step(other)
    assert not out.score_logged
    assert out.raw_score == env.scorer(ENC.key(s, other))
    spec = env.actions[other]
    lat, cost = env.model.outcome(conv[0].conversation_id, 0, conv[0].prompt_tokens,
                                  conv[0].response_tokens, spec)
    assert (out.raw_latency_s, out.raw_cost_usd) == (lat, cost)


def test_episode_accounting(small_data):
    env = make_env_factory(small_data, RewardWeights(1.0, 0.0, 0.0, 0.0), ConstraintBudget())()
    rng = np.random.default_rng(0)
    for conv in small_data.train[:20]:
        env.reset(conv)
        outs, done = [], False
        while not done:
            out = env.step(int(rng.integers(9)))
            outs.append(out)
            done = out.done
        assert len(outs) == len(conv)
        assert sum(o.reward for o in outs) == pytest.approx(sum(o.raw_score for o in outs), abs=1e-12)
        # window holds the last tau actions of this conversation only
        assert env.window.latency_sum == pytest.approx(sum(o.raw_latency_s for o in outs[-5:]))
    with pytest.raises(RuntimeError):
        env.step(0)


def test_invalid_action(small_factory, small_data):
    env = small_factory()
    env.reset(_conv(small_data, 2))
    with pytest.raises(ValueError):
        env.step(9)


def test_budget_window():
    w = BudgetWindow(5, 30.0, 0.05, ((20.0, 0.02), (15.0, 0.02)))
    g1, g2 = w.g
    assert g1 == pytest.approx(5.0) and g2 == pytest.approx(-0.01)
    assert BudgetWindow.empty(ConstraintBudget(30.0, 0.05, 5)).g == (-30.0, -0.05)
    w = BudgetWindow.empty(ConstraintBudget(30.0, 0.05, 3))
    for i in range(4):
        w = update_budget(w, float(i + 1), 0.01 * (i + 1))
    assert w.entries == ((2.0, 0.02), (3.0, 0.03), (4.0, 0.04))
    assert w.latency_sum == 9.0
    assert w.relative_g[0] == pytest.approx((9.0 - 30.0) / 30.0)


def test_env_rejects_dataset_without_generator(small_data):
    meta = dataclasses.replace(small_data.meta, generator=None)
    data = dataclasses.replace(small_data, meta=meta)
    with pytest.raises(ValueError):
        OffloadEnv(data)
