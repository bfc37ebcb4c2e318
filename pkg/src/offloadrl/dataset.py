"""Dialogue records, the seeded synthetic corpus generator, splitting and file I/O.

The file format is line-delimited JSON: the first line is a metadata object,
every following line is one record with the fields of :class:`DialogueRecord`.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .costs import DEFAULT_DEVICE, CloudRates, CostModel, NormBounds, get_device
from .domain import ActionSpec, LLMChoice, action_count, action_index, enumerate_actions

SCHEMA_VERSION = 1

# Cloud text-only score per task (Assistant, Recommendation, Query, Message Editing).
DEFAULT_BASE_SCORES = (0.85, 0.80, 0.75, 0.90)
# Task x modality relevance (first-person, side, overhead views).
DEFAULT_AFFINITY = (
    (0.60, 0.20, 0.30),
    (0.20, 0.70, 0.30),
    (0.30, 0.30, 0.80),
    (0.05, 0.00, 0.05),
)


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DialogueRecord:
    conversation_id: int
    turn_index: int
    task: int
    action: ActionSpec
    prompt_tokens: int
    response_tokens: int
    response_score: float
    association: tuple[float, ...]
    latency_s: float
    cost_usd: float

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["action"] = {"llm": self.action.llm.value, "modalities": list(self.action.modalities)}
        d["association"] = list(self.association)
        return d


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    conversations: int = 2000
    modality_count: int = 3
    task_count: int = 4
    affinity: tuple[tuple[float, ...], ...] | None = None
    base_scores: tuple[float, ...] | None = None
    coverage_scale: float = 0.35
    local_quality_gap: float = 0.3
    nde_noise_sd: float = 0.1
    persistence_bonus: float = 0.0
    association_base: float = 0.1
    association_scale: float = 0.4
    association_noise_sd: float = 0.05
    device: str = DEFAULT_DEVICE
    model_params: float = 3.8e9
    ref_tokens: float = 250.0
    cloud_latency_base_s: float = 7.0
    cloud_latency_per_modality_s: float = 2.5
    cloud_latency_jitter_sd: float = 0.5
    prompt_token_range: tuple[int, int] = (50, 350)
    response_token_range: tuple[int, int] = (150, 450)
    modality_bytes: tuple[float, ...] | None = None
    modality_rate: float = 0.008
    split_ratio: float = 0.8

    def __post_init__(self):
        if self.conversations < 1:
            raise ValueError("conversations must be >= 1")
        if self.modality_count < 1 or self.task_count < 1:
            raise ValueError("modality_count and task_count must be >= 1")
        action_count(self.modality_count)
        for name in ("prompt_token_range", "response_token_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} must satisfy 1 <= min <= max, got {(lo, hi)}")
        for name in ("nde_noise_sd", "cloud_latency_jitter_sd", "association_noise_sd",
                     "persistence_bonus", "coverage_scale", "modality_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        aff = self.affinity_matrix()
        if aff.shape != (self.task_count, self.modality_count):
            raise ValueError(f"affinity must be {self.task_count}x{self.modality_count}")
        if np.any(aff < 0) or np.any(aff > 1):
            raise ValueError("affinity entries must lie in [0, 1]")
        if len(self.base_score_vector()) != self.task_count:
            raise ValueError("base_scores length must equal task_count")
        if len(self.modality_size_vector()) != self.modality_count:
            raise ValueError("modality_bytes length must equal modality_count")
        get_device(self.device)

    def affinity_matrix(self) -> np.ndarray:
        if self.affinity is not None:
            return np.asarray(self.affinity, dtype=float)
        if (self.task_count, self.modality_count) == (4, 3):
            return np.asarray(DEFAULT_AFFINITY)
        rng = np.random.default_rng([self.seed, 7])
        return rng.uniform(0.0, 1.0, (self.task_count, self.modality_count))

    def base_score_vector(self) -> np.ndarray:
        if self.base_scores is not None:
            return np.asarray(self.base_scores, dtype=float)
        if self.task_count == 4:
            return np.asarray(DEFAULT_BASE_SCORES)
        return np.linspace(0.75, 0.9, self.task_count)

    def modality_size_vector(self) -> np.ndarray:
        if self.modality_bytes is not None:
            return np.asarray(self.modality_bytes, dtype=float)
        return np.ones(self.modality_count)

    def cost_model(self) -> CostModel:
        rates = CloudRates(modality_rates=(self.modality_rate,) * self.modality_count)
        return CostModel(get_device(self.device), self.model_params, self.ref_tokens, rates)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        for key in ("affinity",):
            if d.get(key) is not None:
                d[key] = tuple(tuple(row) for row in d[key])
        for key in ("base_scores", "modality_bytes", "prompt_token_range", "response_token_range"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise DatasetFormatError(f"unknown generator fields {sorted(unknown)}")
        return cls(**d)


class InteractionModel:
    """Deterministic outcome oracle for any (record, action) pair.

    Local outcomes come from the device cost model; cloud latency is
    base + per-modality + Gaussian jitter keyed on (seed, conversation, turn,
    action) so counterfactual actions are re-evaluated reproducibly.
    """

    def __init__(self, config: GeneratorConfig):
        self.config = config
        self.costs = config.cost_model()
        self.sizes = config.modality_size_vector()
        self.affinity = config.affinity_matrix()
        self.base = config.base_score_vector()
        self._jitter_key = None
        self._jitter = None

    def cloud_jitter(self, conversation_id: int, turn_index: int) -> np.ndarray:
        """Latency jitter for every action index of one dialogue turn."""
        c = self.config
        key = (conversation_id, turn_index)
        if self._jitter_key != key:
            rng = np.random.default_rng([c.seed, conversation_id, turn_index, 1])
            self._jitter = rng.normal(0.0, 1.0, action_count(c.modality_count)) * c.cloud_latency_jitter_sd
            self._jitter_key = key
        return self._jitter

    def cloud_latency(self, conversation_id: int, turn_index: int, action: ActionSpec) -> float:
        c = self.config
        jitter = self.cloud_jitter(conversation_id, turn_index)[action_index(action, c.modality_count)]
        lat = c.cloud_latency_base_s + c.cloud_latency_per_modality_s * action.n_selected + jitter
        return max(0.0, float(lat))

    def outcome(self, conversation_id: int, turn_index: int, prompt_tokens: int,
                response_tokens: int, action: ActionSpec) -> tuple[float, float]:
        if action.is_local:
            return self.costs.local(prompt_tokens, response_tokens)
        lat = self.cloud_latency(conversation_id, turn_index, action)
        cost = self.costs.cloud(prompt_tokens, response_tokens, action.modalities, self.sizes)
        return lat, cost

    def mean_score(self, task: int, action: ActionSpec, uploaded_before: Sequence[int] = ()) -> float:
        c = self.config
        if action.is_local:
            return float(self.base[task] - c.local_quality_gap)
        aff = self.affinity[task]
        miss = 1.0
        for m in action.selected:
            miss *= 1.0 - aff[m]
        if c.persistence_bonus > 0:
            for m in set(uploaded_before) - set(action.selected):
                miss *= 1.0 - c.persistence_bonus * aff[m]
        return float(self.base[task] + c.coverage_scale * (1.0 - miss))


@dataclass(frozen=True)
class DatasetMeta:
    modality_count: int
    task_count: int
    record_count: int
    split_ratio: float
    split_seed: int
    bounds: NormBounds
    generator: GeneratorConfig | None = None
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "modality_count": self.modality_count,
            "task_count": self.task_count,
            "record_count": self.record_count,
            "split_ratio": self.split_ratio,
            "split_seed": self.split_seed,
            "bounds": dataclasses.asdict(self.bounds),
            "generator": None if self.generator is None else self.generator.to_json(),
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    records: tuple[DialogueRecord, ...]
    meta: DatasetMeta
    train: tuple[tuple[DialogueRecord, ...], ...] = field(repr=False, default=())
    test: tuple[tuple[DialogueRecord, ...], ...] = field(repr=False, default=())

    def interaction_model(self) -> InteractionModel:
        if self.meta.generator is None:
            raise ValueError("dataset metadata carries no generator config; "
                             "counterfactual outcomes cannot be evaluated")
        return InteractionModel(self.meta.generator)

    @property
    def train_records(self) -> list[DialogueRecord]:
        return [r for conv in self.train for r in conv]

    @property
    def test_records(self) -> list[DialogueRecord]:
        return [r for conv in self.test for r in conv]


def group_conversations(records: Iterable[DialogueRecord]) -> list[tuple[DialogueRecord, ...]]:
    convs: dict[int, list[DialogueRecord]] = {}
    for r in records:
        convs.setdefault(r.conversation_id, []).append(r)
    out = []
    for cid in sorted(convs):
        turns = sorted(convs[cid], key=lambda r: r.turn_index)
        if [r.turn_index for r in turns] != list(range(len(turns))):
            raise DatasetFormatError(f"conversation {cid} has non-contiguous turns")
        out.append(tuple(turns))
    return out


def split(records: Sequence[DialogueRecord], ratio: float = 0.8, seed: int = 0):
    """Shuffle conversations with ``seed`` and cut at ``floor(ratio * n)``."""
    convs = group_conversations(records)
    if len(convs) < 2:
        raise ValueError("need at least 2 conversations to split")
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    n_train = math.floor(ratio * len(convs) + 1e-9)
    if n_train == 0 or n_train == len(convs):
        raise ValueError(f"ratio {ratio} leaves an empty split for {len(convs)} conversations")
    order = np.random.default_rng([seed, 3]).permutation(len(convs))
    train = tuple(convs[i] for i in sorted(order[:n_train]))
    test = tuple(convs[i] for i in sorted(order[n_train:]))
    return train, test


def training_bounds(train: Iterable[Sequence[DialogueRecord]]) -> NormBounds:
    lat = [r.latency_s for conv in train for r in conv]
    cost = [r.cost_usd for conv in train for r in conv]
    return NormBounds(float(min(lat)), float(max(lat)), float(min(cost)), float(max(cost)))


def _assemble(records, generator: GeneratorConfig | None, ratio: float, seed: int,
              modality_count: int, task_count: int) -> Dataset:
    records = tuple(records)
    train, test = split(records, ratio, seed)
    meta = DatasetMeta(modality_count, task_count, len(records), ratio, seed,
                       training_bounds(train), generator)
    return Dataset(records, meta, train, test)


def generate(config: GeneratorConfig) -> Dataset:
    """Build a synthetic corpus: 2-5 turns per conversation, uniform random tasks and actions."""
    c = config
    rng = np.random.default_rng(c.seed)
    model = InteractionModel(c)
    actions = enumerate_actions(c.modality_count)
    records = []
    for cid in range(c.conversations):
        n_turns = int(rng.integers(2, 6))
        uploaded: set[int] = set()
        for t in range(n_turns):
            task = int(rng.integers(c.task_count))
            action = actions[int(rng.integers(len(actions)))]
            p_tok = int(rng.integers(c.prompt_token_range[0], c.prompt_token_range[1] + 1))
            r_tok = int(rng.integers(c.response_token_range[0], c.response_token_range[1] + 1))
            assoc_noise = rng.normal(0.0, 1.0, c.modality_count) * c.association_noise_sd
            score_noise = rng.normal(0.0, 1.0) * c.nde_noise_sd
            assoc = np.clip(c.association_base + c.association_scale * model.affinity[task]
                            + assoc_noise, -1.0, 1.0)
            score = max(0.0, model.mean_score(task, action, sorted(uploaded)) + score_noise)
            lat, cost = model.outcome(cid, t, p_tok, r_tok, action)
            records.append(DialogueRecord(cid, t, task, action, p_tok, r_tok, float(score),
                                          tuple(float(a) for a in assoc), lat, cost))
            uploaded.update(action.selected)
    return _assemble(records, c, c.split_ratio, c.seed, c.modality_count, c.task_count)


def save(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(dataset.meta.to_json(), sort_keys=True) + "\n")
        for r in dataset.records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


_RECORD_FIELDS = [f.name for f in dataclasses.fields(DialogueRecord)]


def _parse_record(obj, lineno: int, modality_count: int, task_count: int) -> DialogueRecord:
    if not isinstance(obj, dict):
        raise DatasetFormatError(f"line {lineno}: record must be an object")
    for name in _RECORD_FIELDS:
        if name not in obj:
            raise DatasetFormatError(f"line {lineno}: missing field {name!r}")
    extra = set(obj) - set(_RECORD_FIELDS)
    if extra:
        raise DatasetFormatError(f"line {lineno}: unknown fields {sorted(extra)}")
    try:
        act = obj["action"]
        action = ActionSpec(LLMChoice(act["llm"]), tuple(act["modalities"]))
        assoc = tuple(float(a) for a in obj["association"])
        rec = DialogueRecord(
            int(obj["conversation_id"]), int(obj["turn_index"]), int(obj["task"]), action,
            int(obj["prompt_tokens"]), int(obj["response_tokens"]), float(obj["response_score"]),
            assoc, float(obj["latency_s"]), float(obj["cost_usd"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {lineno}: {exc}") from None
    if action.modality_count != modality_count:
        raise DatasetFormatError(f"line {lineno}: action has {action.modality_count} modality "
                                 f"flags, expected {modality_count}")
    if len(assoc) != modality_count:
        raise DatasetFormatError(f"line {lineno}: association has {len(assoc)} entries, "
                                 f"expected {modality_count}")
    if any(not -1.0 <= a <= 1.0 for a in assoc):
        raise DatasetFormatError(f"line {lineno}: association outside [-1, 1]")
    if not 0 <= rec.task < task_count:
        raise DatasetFormatError(f"line {lineno}: task {rec.task} out of range")
    if rec.prompt_tokens < 1 or rec.response_tokens < 1:
        raise DatasetFormatError(f"line {lineno}: token counts must be >= 1")
    if rec.latency_s < 0 or rec.cost_usd < 0 or rec.response_score < 0:
        raise DatasetFormatError(f"line {lineno}: negative latency, cost or score")
    return rec


def load(path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: malformed metadata: {exc}") from None
    if head.get("schema_version") != SCHEMA_VERSION:
        raise DatasetFormatError(
            f"schema version {head.get('schema_version')!r} != supported {SCHEMA_VERSION}")
    try:
        mc, tc = int(head["modality_count"]), int(head["task_count"])
        gen = head.get("generator")
        generator = None if gen is None else GeneratorConfig.from_json(gen)
        ratio, seed = float(head["split_ratio"]), int(head["split_seed"])
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"line 1: bad metadata: {exc}") from None
    records = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: malformed JSON: {exc}") from None
        records.append(_parse_record(obj, lineno, mc, tc))
    if len(records) != head.get("record_count", len(records)):
        raise DatasetFormatError(
            f"metadata says {head['record_count']} records, file has {len(records)}")
    for conv in group_conversations(records):
        if not 2 <= len(conv) <= 5:
            raise DatasetFormatError(
                f"conversation {conv[0].conversation_id} has {len(conv)} turns (need 2-5)")
    return _assemble(records, generator, ratio, seed, mc, tc)
