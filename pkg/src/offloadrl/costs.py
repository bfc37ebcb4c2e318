"""Closed-form latency and usage-cost models, association scoring, normalization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import DeviceProfile

# Local devices with their published per-action latency (s) and usage cost
# (USD) for the reference workload. The last two columns are only used to
# derive and check the workload constant.
DEVICE_TABLE = (
    ("Raspberry Pi-4B", 0.0135, 8, 1.12593, 4.17e-7),
    ("Raspberry Pi-5", 0.0314, 12, 0.48408, 2.69e-7),
    ("Jetson Nano", 0.472, 10, 0.03220, 1.49e-8),
    ("Jetson TX2", 1.33, 15, 0.01143, 7.94e-9),
    ("Jetson Xavier NX", 21, 20, 0.00072, 6.71e-10),
    ("Jetson Orin NX", 100, 25, 0.00015, 1.76e-10),
    ("iPhone 15 (A16)", 15.8, 15, 0.00096, 6.69e-10),
    ("iPhone 15 Pro (A17 Pro)", 35, 15, 0.00043, 3.02e-10),
)

DEVICES: dict[str, DeviceProfile] = {
    name: DeviceProfile(name, tflops, watts) for name, tflops, watts, _, _ in DEVICE_TABLE
}
DEFAULT_DEVICE = "Jetson TX2"

KAPPA_USD_PER_JOULE = 4.63e-8


def reference_workload_flops() -> float:
    """Workload constant 2|LLM|(|P|+|R|)/|P|_ref shared by every table row.

    Mean of latency x peak FLOPS over the table (about 1.514e10). The latency
    column is rounded to 5 decimals, so the fast devices carry only 2-3
    significant digits and a single row cannot pin the constant.
    """
    return float(np.mean([lat * tf * 1e12 for _, tf, _, lat, _ in DEVICE_TABLE]))


def get_device(name: str) -> DeviceProfile:
    try:
        return DEVICES[name]
    except KeyError:
        raise KeyError(f"unknown device {name!r}; known: {sorted(DEVICES)}") from None


def load_device_table(path) -> dict[str, DeviceProfile]:
    """Read a CSV with columns ``name,TFLOPS,Watts`` (extra columns ignored)."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"name", "TFLOPS", "Watts"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: device table missing columns {sorted(missing)}")
        for row in reader:
            out[row["name"]] = DeviceProfile(row["name"], float(row["TFLOPS"]), float(row["Watts"]))
    return out


@dataclass(frozen=True)
class LocalWorkload:
    model_params: float
    total_tokens: float
    ref_tokens: float

    def __post_init__(self):
        if min(self.model_params, self.total_tokens, self.ref_tokens) <= 0:
            raise ValueError("workload factors must be > 0")

    @property
    def flops(self) -> float:
        return 2.0 * self.model_params * self.total_tokens / self.ref_tokens


@dataclass(frozen=True)
class CloudRates:
    prompt_rate: float = 0.005      # USD per 1K prompt tokens
    response_rate: float = 0.015    # USD per 1K response tokens
    modality_rates: tuple[float, ...] = (0.008, 0.008, 0.008)   # USD per unit size

    def __post_init__(self):
        if self.prompt_rate < 0 or self.response_rate < 0 or any(r < 0 for r in self.modality_rates):
            raise ValueError("cloud rates must be >= 0")


@dataclass(frozen=True)
class EnergyPricing:
    kappa: float = KAPPA_USD_PER_JOULE

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")


def local_latency(w: LocalWorkload, d: DeviceProfile) -> float:
    if d.peak_tflops <= 0:
        raise ValueError("peak FLOPS must be > 0")
    return w.flops / d.peak_flops


def local_cost(latency: float, d: DeviceProfile, p: EnergyPricing = EnergyPricing()) -> float:
    if latency < 0:
        raise ValueError("latency must be >= 0")
    return latency * d.max_watts * p.kappa


def cloud_cost(prompt_tokens: float, response_tokens: float,
               modality_sizes: Mapping[int, float] | Sequence[float | None],
               rates: CloudRates = CloudRates(),
               selected: Sequence[int] | None = None) -> float:
    """Service fee of one cloud request.

    ``modality_sizes`` maps modality index to payload size. When ``selected``
    is given, a size for any modality outside it is an error.
    """
    if prompt_tokens < 0 or response_tokens < 0:
        raise ValueError("token counts must be >= 0")
    if not isinstance(modality_sizes, Mapping):
        modality_sizes = {m: s for m, s in enumerate(modality_sizes) if s is not None}
    if selected is not None:
        extra = set(modality_sizes) - set(selected)
        if extra:
            raise ValueError(f"size given for unselected modalities {sorted(extra)}")
    total = rates.prompt_rate * prompt_tokens / 1000.0 + rates.response_rate * response_tokens / 1000.0
    for m, size in sorted(modality_sizes.items()):
        if size < 0:
            raise ValueError("modality size must be >= 0")
        total += rates.modality_rates[m] * size
    return total


def association(text_emb, image_emb) -> float:
    """Cosine similarity between a prompt embedding and a modality embedding."""
    u = np.asarray(text_emb, dtype=float)
    v = np.asarray(image_emb, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"embedding shapes differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("association undefined for zero-norm embedding")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def load_embeddings(path) -> dict[str, np.ndarray]:
    """One vector per line: ``id v1 v2 ...`` (whitespace or comma separated)."""
    out = {}
    dim = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        try:
            vec = np.array([float(x) for x in parts[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if vec.size == 0 or (dim is not None and vec.size != dim):
            raise ValueError(f"{path}:{lineno}: bad vector length {vec.size}")
        dim = vec.size
        out[parts[0]] = vec
    return out


def minmax_normalize(x, lo: float, hi: float):
    if not lo < hi:
        raise ValueError(f"min-max bounds need lo < hi, got {lo}, {hi}")
    return np.clip((np.asarray(x, dtype=float) - lo) / (hi - lo), 0.0, 1.0)


@dataclass(frozen=True)
class NormBounds:
    """Min/max latency and cost from the training split."""

    latency_min: float
    latency_max: float
    cost_min: float
    cost_max: float

    def __post_init__(self):
        if self.latency_min > self.latency_max or self.cost_min > self.cost_max:
            raise ValueError("normalization bounds need min <= max")

    def latency(self, x):
        return float(minmax_normalize(x, self.latency_min, self.latency_max))

    def cost(self, x):
        return float(minmax_normalize(x, self.cost_min, self.cost_max))


@dataclass(frozen=True)
class CostModel:
    """Per-request latency/cost oracle for one device and price sheet."""

    device: DeviceProfile
    model_params: float = 3.8e9
    ref_tokens: float = 500.0
    rates: CloudRates = field(default_factory=CloudRates)
    pricing: EnergyPricing = field(default_factory=EnergyPricing)

    def local(self, prompt_tokens: int, response_tokens: int) -> tuple[float, float]:
        w = LocalWorkload(self.model_params, prompt_tokens + response_tokens, self.ref_tokens)
        lat = local_latency(w, self.device)
        return lat, local_cost(lat, self.device, self.pricing)

    def cloud(self, prompt_tokens: int, response_tokens: int, flags: Sequence[int],
              modality_sizes: Sequence[float]) -> float:
        sizes = {m: modality_sizes[m] for m, f in enumerate(flags) if f}
        return cloud_cost(prompt_tokens, response_tokens, sizes, self.rates)
