"""Shared vocabulary: LLM choice, modality sets, actions, weights and budgets."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

MAX_MODALITIES = 16

DEFAULT_MODALITIES = ("first_person", "side", "overhead")
DEFAULT_TASKS = ("Assistant", "Recommendation", "Query", "Message Editing")


class LLMChoice(enum.Enum):
    LOCAL = "Local"
    CLOUD = "Cloud"


@dataclass(frozen=True)
class ActionSpec:
    """An LLM choice plus the subset of modalities uploaded with it.

    ``modalities`` is a tuple of 0/1 flags over the modality universe. Local
    actions never carry modalities.
    """

    llm: LLMChoice
    modalities: tuple[int, ...]

    def __post_init__(self):
        flags = tuple(int(f) for f in self.modalities)
        if any(f not in (0, 1) for f in flags):
            raise ValueError(f"modality flags must be 0/1, got {self.modalities}")
        if self.llm is LLMChoice.LOCAL and any(flags):
            raise ValueError("a local action cannot upload modalities")
        object.__setattr__(self, "modalities", flags)

    @classmethod
    def local(cls, modality_count: int) -> "ActionSpec":
        return cls(LLMChoice.LOCAL, (0,) * modality_count)

    @classmethod
    def cloud(cls, flags: Sequence[int]) -> "ActionSpec":
        return cls(LLMChoice.CLOUD, tuple(flags))

    @property
    def is_local(self) -> bool:
        return self.llm is LLMChoice.LOCAL

    @property
    def modality_count(self) -> int:
        return len(self.modalities)

    @property
    def selected(self) -> list[int]:
        return [m for m, f in enumerate(self.modalities) if f]

    @property
    def n_selected(self) -> int:
        return sum(self.modalities)


def _check_modality_count(modality_count: int) -> None:
    if modality_count < 1:
        raise ValueError("modality_count must be >= 1")
    if modality_count > MAX_MODALITIES:
        raise ValueError(
            f"modality_count {modality_count} exceeds {MAX_MODALITIES} "
            f"(action space would have {1 + 2 ** modality_count} entries)")


def enumerate_actions(modality_count: int) -> list[ActionSpec]:
    """All actions in canonical order.

    Index 0 is the local action; index ``1 + b`` is the cloud action whose
    modality flags are the binary digits of ``b`` (modality 0 = least
    significant bit).
    """
    _check_modality_count(modality_count)
    actions = [ActionSpec.local(modality_count)]
    for b in range(2 ** modality_count):
        flags = tuple((b >> m) & 1 for m in range(modality_count))
        actions.append(ActionSpec.cloud(flags))
    return actions


def action_index(action: ActionSpec, modality_count: int) -> int:
    _check_modality_count(modality_count)
    if action.modality_count != modality_count:
        raise ValueError(
            f"action has {action.modality_count} modality flags, expected {modality_count}")
    if action.is_local:
        return 0
    return 1 + sum(f << m for m, f in enumerate(action.modalities))


def action_count(modality_count: int) -> int:
    _check_modality_count(modality_count)
    return 1 + 2 ** modality_count


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 1.0
    beta_assoc: float = 1 / 3
    beta_latency: float = 1 / 3
    beta_cost: float = 1 / 3

    def __post_init__(self):
        for name in ("alpha", "beta_assoc", "beta_latency", "beta_cost"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "RewardWeights":
        """Parse ``"a,bA,bL,bC"``; components may be fractions such as ``1/3``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected 4 comma-separated weights, got {text!r}")
        return cls(*(_parse_number(p) for p in parts))

    def as_text(self) -> str:
        return ",".join(repr(float(v)) for v in
                        (self.alpha, self.beta_assoc, self.beta_latency, self.beta_cost))


def _parse_number(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


@dataclass(frozen=True)
class ConstraintBudget:
    latency_budget: float = 30.0
    cost_budget: float = 0.05
    horizon: int = 5

    def __post_init__(self):
        if self.latency_budget <= 0 or self.cost_budget <= 0:
            raise ValueError("budgets must be > 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    peak_tflops: float
    max_watts: float

    def __post_init__(self):
        if self.peak_tflops <= 0 or self.max_watts <= 0:
            raise ValueError(f"device {self.name!r}: TFLOPS and Watts must be > 0")

    @property
    def peak_flops(self) -> float:
        return self.peak_tflops * 1e12
