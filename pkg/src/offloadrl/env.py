"""Multi-dialogue offloading MDP replayed from logged conversations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset, DialogueRecord, InteractionModel
from .domain import (ActionSpec, ConstraintBudget, RewardWeights, action_count, action_index,
                     enumerate_actions)
from .estimator import ScoreEstimator, ScoreIndex, build_index, global_mean_estimator


@dataclass(frozen=True)
class EncodedState:
    """History of (action index, task) pairs, oldest first, plus the pending task.

    ``current_task`` is None for the terminal state after the last turn.
    """

    history: tuple[tuple[int, int], ...]
    current_task: int | None
    vector: np.ndarray = field(compare=False, repr=False)


class StateEncoder:
    """Flattens tau slots of [pad, local, cloud | modality flags | task one-hot].

    The last slot is the pending dialogue: its task is set and its LLM and
    modality fields stay zero until an action is taken.
    """

    def __init__(self, horizon: int, modality_count: int, task_count: int):
        self.horizon = horizon
        self.modality_count = modality_count
        self.task_count = task_count
        self.slot_dim = 3 + modality_count + task_count
        self.dim = horizon * self.slot_dim
        self.actions = enumerate_actions(modality_count)
        self.action_dim = 2 + modality_count
        self._action_feats = np.array([self._action_features(a) for a in self.actions])

    def _action_features(self, a: ActionSpec) -> list[float]:
        return [float(a.is_local), float(not a.is_local), *map(float, a.modalities)]

    def action_features(self, action: ActionSpec | int) -> np.ndarray:
        idx = action if isinstance(action, (int, np.integer)) else action_index(action, self.modality_count)
        return self._action_feats[idx]

    def encode(self, history: Sequence[tuple[int, int]], current_task: int | None) -> EncodedState:
        history = tuple(history)[-(self.horizon - 1):] if self.horizon > 1 else ()
        v = np.zeros((self.horizon, self.slot_dim))
        n_pad = self.horizon - 1 - len(history)
        v[:n_pad, 0] = 1.0
        M = self.modality_count
        for row, (a_idx, task) in enumerate(history, start=n_pad):
            a = self.actions[a_idx]
            v[row, 1 if a.is_local else 2] = 1.0
            v[row, 3:3 + M] = a.modalities
            v[row, 3 + M + task] = 1.0
        if current_task is not None:
            if not 0 <= current_task < self.task_count:
                raise ValueError(f"task {current_task} out of range")
            v[-1, 3 + M + current_task] = 1.0
        return EncodedState(history, current_task, v.ravel())

    def advance(self, state: EncodedState, action: int, next_task: int | None) -> EncodedState:
        if state.current_task is None:
            raise ValueError("cannot advance a terminal state")
        return self.encode(state.history + ((action, state.current_task),), next_task)

    def key(self, state: EncodedState, action: ActionSpec | int) -> np.ndarray:
        return np.concatenate([state.vector, self.action_features(action)])

    def logged_keys(self, conversation: Sequence[DialogueRecord]) -> list[np.ndarray]:
        """[state action] keys along the logged trajectory of a conversation."""
        keys = []
        state = self.encode((), conversation[0].task)
        for i, rec in enumerate(conversation):
            a = action_index(rec.action, self.modality_count)
            keys.append(self.key(state, a))
            nxt = conversation[i + 1].task if i + 1 < len(conversation) else None
            state = self.advance(state, a, nxt)
        return keys


@dataclass(frozen=True)
class BudgetWindow:
    """Rolling sums of raw latency and cost over the last ``horizon`` actions."""

    horizon: int
    latency_budget: float
    cost_budget: float
    entries: tuple[tuple[float, float], ...] = ()

    @classmethod
    def empty(cls, budget: ConstraintBudget) -> "BudgetWindow":
        return cls(budget.horizon, budget.latency_budget, budget.cost_budget)

    @property
    def latency_sum(self) -> float:
        return float(sum(e[0] for e in self.entries))

    @property
    def cost_sum(self) -> float:
        return float(sum(e[1] for e in self.entries))

    @property
    def g(self) -> tuple[float, float]:
        """Signed overshoot in raw units (seconds, USD)."""
        return self.latency_sum - self.latency_budget, self.cost_sum - self.cost_budget

    @property
    def relative_g(self) -> tuple[float, float]:
        g1, g2 = self.g
        return g1 / self.latency_budget, g2 / self.cost_budget


def update_budget(window: BudgetWindow, latency_s: float, cost_usd: float) -> BudgetWindow:
    entries = (window.entries + ((float(latency_s), float(cost_usd)),))[-window.horizon:]
    return BudgetWindow(window.horizon, window.latency_budget, window.cost_budget, entries)


def compute_reward(weights: RewardWeights, score: float, assoc_sum: float,
                   latency_norm: float, cost_norm: float) -> float:
    return (weights.alpha * score + weights.beta_assoc * assoc_sum
            - weights.beta_latency * latency_norm - weights.beta_cost * cost_norm)


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    raw_score: float
    raw_association_sum: float
    raw_latency_s: float
    raw_cost_usd: float
    latency_norm: float
    cost_norm: float
    next_state: EncodedState
    done: bool
    action: int
    score_logged: bool
    window: BudgetWindow
    prior_window: BudgetWindow


class OffloadEnv:
    """Episode = one logged conversation; the policy's actions drive the history.

    Counterfactual actions are resolved without the LLMs: scores from the
    nearest-neighbour estimator, local latency/cost from the device model,
    cloud latency from the deterministic interaction model.
    """

    def __init__(self, dataset: Dataset, weights: RewardWeights = RewardWeights(),
                 budget: ConstraintBudget = ConstraintBudget(),
                 scorer: Callable | None = None, k: int = 5, encoder: StateEncoder | None = None):
        meta = dataset.meta
        self.dataset = dataset
        self.weights = weights
        self.budget = budget
        self.bounds = meta.bounds
        self.encoder = encoder or StateEncoder(budget.horizon, meta.modality_count, meta.task_count)
        self.actions = self.encoder.actions
        self.n_actions = action_count(meta.modality_count)
        self.model: InteractionModel = dataset.interaction_model()
        if scorer is None:
            scorer = ScoreEstimator(build_score_index(dataset, self.encoder), k)
        self.scorer = scorer
        self._cost_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        self.conversation: Sequence[DialogueRecord] = ()
        self.turn = 0
        self.state: EncodedState | None = None
        self.window: BudgetWindow | None = None

    @property
    def state_dim(self) -> int:
        return self.encoder.dim

    def reset(self, conversation: Sequence[DialogueRecord]) -> EncodedState:
        if len(conversation) < 1:
            raise ValueError("cannot reset on an empty conversation")
        self.conversation = conversation
        self.turn = 0
        self.window = BudgetWindow.empty(self.budget)
        self.state = self.encoder.encode((), conversation[0].task)
        return self.state

    def action_costs(self, record: DialogueRecord) -> tuple[np.ndarray, np.ndarray]:
        """Raw latency and cost of every action for this record's prompt."""
        key = (record.conversation_id, record.turn_index)
        hit = self._cost_cache.get(key)
        if hit is None:
            out = [self.model.outcome(record.conversation_id, record.turn_index,
                                      record.prompt_tokens, record.response_tokens, a)
                   for a in self.actions]
            lat = np.array([o[0] for o in out])
            cost = np.array([o[1] for o in out])
            logged = action_index(record.action, self.encoder.modality_count)
            lat[logged], cost[logged] = record.latency_s, record.cost_usd
            hit = self._cost_cache[key] = (lat, cost)
        return hit

    def resolve_score(self, state: EncodedState, action: int, record: DialogueRecord) -> tuple[float, bool]:
        if self.actions[action] == record.action:
            return record.response_score, True
        return float(self.scorer(self.encoder.key(state, action))), False

    def step(self, action: ActionSpec | int) -> StepOutcome:
        if self.state is None or self.state.current_task is None:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if isinstance(action, ActionSpec):
            action = action_index(action, self.encoder.modality_count)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action index {action} outside [0, {self.n_actions})")
        rec = self.conversation[self.turn]
        spec = self.actions[action]
        score, logged = self.resolve_score(self.state, action, rec)
        assoc = float(sum(rec.association[m] for m in spec.selected))
        lat_all, cost_all = self.action_costs(rec)
        lat, cost = float(lat_all[action]), float(cost_all[action])
        lat_n, cost_n = self.bounds.latency(lat), self.bounds.cost(cost)
        r = compute_reward(self.weights, score, assoc, lat_n, cost_n)
        prior = self.window
        self.window = update_budget(prior, lat, cost)
        self.turn += 1
        done = self.turn >= len(self.conversation)
        nxt_task = None if done else self.conversation[self.turn].task
        self.state = self.encoder.advance(self.state, action, nxt_task)
        return StepOutcome(r, score, assoc, lat, cost, lat_n, cost_n, self.state, done,
                           action, logged, self.window, prior)


def build_score_index(dataset: Dataset, encoder: StateEncoder) -> ScoreIndex:
    return build_index(dataset.train, encoder.logged_keys)


def make_env_factory(dataset: Dataset, weights: RewardWeights, budget: ConstraintBudget,
                     k: int = 5, score_mode: str = "knn") -> Callable[[], OffloadEnv]:
    """Factory sharing one score index (built from the training split) across envs."""
    encoder = StateEncoder(budget.horizon, dataset.meta.modality_count, dataset.meta.task_count)
    index = build_score_index(dataset, encoder)
    if score_mode == "knn":
        scorer = ScoreEstimator(index, k)
    elif score_mode == "mean":
        scorer = global_mean_estimator(index)
    else:
        raise ValueError(f"unknown score_mode {score_mode!r}")
    return lambda: OffloadEnv(dataset, weights, budget, scorer, k, encoder)
