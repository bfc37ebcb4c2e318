"""Non-learning comparison policies and a task-contextual UCB bandit."""

from __future__ import annotations

import math

import numpy as np

from .domain import ActionSpec, action_count, enumerate_actions


class RandomPolicy:
    """Uniform over every action, local included."""

    name = "random"

    def __init__(self, modality_count: int, seed: int = 0):
        self.actions = enumerate_actions(modality_count)
        self.rng = np.random.default_rng([seed, 11])

    def select(self, state, task: int) -> int:
        return int(self.rng.integers(len(self.actions)))

    def update(self, task: int, action: int, reward: float) -> None:
        pass


class LocalOnlyPolicy:
    name = "local"

    def __init__(self, modality_count: int):
        self.actions = enumerate_actions(modality_count)

    def select(self, state, task: int) -> int:
        return 0

    def update(self, task: int, action: int, reward: float) -> None:
        pass


class CloudRandomModalitiesPolicy:
    """Always cloud, with a uniform modality subset (text-only included)."""

    name = "cloud"

    def __init__(self, modality_count: int, seed: int = 0):
        self.actions = enumerate_actions(modality_count)
        self.rng = np.random.default_rng([seed, 13])

    def select(self, state, task: int) -> int:
        return 1 + int(self.rng.integers(len(self.actions) - 1))

    def update(self, task: int, action: int, reward: float) -> None:
        pass


class UCBPolicy:
    """UCB1 with one arm per (task, action).

    Unpulled arms of the current task are tried first in index order; after
    that the arm maximising ``mean + c * sqrt(ln(total) / pulls)`` is chosen,
    where ``total`` counts pulls within the task.
    """

    name = "ucb"

    def __init__(self, modality_count: int, task_count: int, exploration: float = math.sqrt(2)):
        self.actions = enumerate_actions(modality_count)
        self.exploration = exploration
        n = action_count(modality_count)
        self.pulls = np.zeros((task_count, n), dtype=int)
        self.means = np.zeros((task_count, n))

    @property
    def arm_count(self) -> int:
        return self.pulls.size

    def select(self, state, task: int) -> int:
        pulls = self.pulls[task]
        unpulled = np.flatnonzero(pulls == 0)
        if unpulled.size:
            return int(unpulled[0])
        total = pulls.sum()
        ucb = self.means[task] + self.exploration * np.sqrt(math.log(total) / pulls)
        return int(np.argmax(ucb))

    def update(self, task: int, action: int, reward: float) -> None:
        self.pulls[task, action] += 1
        self.means[task, action] += (reward - self.means[task, action]) / self.pulls[task, action]


BASELINES = ("random", "local", "cloud", "ucb")


def make_baseline(name: str, modality_count: int, task_count: int, seed: int = 0,
                  exploration: float = math.sqrt(2)):
    if name == "random":
        return RandomPolicy(modality_count, seed)
    if name == "local":
        return LocalOnlyPolicy(modality_count)
    if name == "cloud":
        return CloudRandomModalitiesPolicy(modality_count, seed)
    if name == "ucb":
        return UCBPolicy(modality_count, task_count, exploration)
    raise ValueError(f"unknown baseline {name!r}; choose from {BASELINES}")


def select_action(policy, state, task: int) -> ActionSpec:
    return policy.actions[policy.select(state, task)]
