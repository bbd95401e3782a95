"""NFE accounting, the batched-pass latency model, and run reports."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .diffusion import LatentState, Predictor, predictor_identity
from .errors import ComparisonError, ConfigError, DomainError

STAGES = ("draft", "target", "baseline")
DEFAULT_SATURATION_BATCH = 16


class NfeLedger:
    """Counts predictor evaluations by stage and keeps the list of forward passes.

    Safe to share between threads: every update takes a lock.
    """

    def __init__(self) -> None:
        self.draft_evals = 0
        self.target_evals = 0
        self.baseline_evals = 0
        self.passes: list[tuple[int, str]] = []
        self._lock = threading.Lock()

    def record_pass(self, batch_size: int, stage: str) -> None:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        if batch_size < 1:
            raise ValueError(f"batch size must be positive, got {batch_size}")
        with self._lock:
            setattr(self, f"{stage}_evals", getattr(self, f"{stage}_evals") + batch_size)
            self.passes.append((batch_size, stage))

    @property
    def total_evals(self) -> int:
        return self.draft_evals + self.target_evals + self.baseline_evals

    def passes_for(self, stage: str) -> list[int]:
        return [b for b, s in self.passes if s == stage]

    def snapshot(self) -> tuple[int, int, int, int]:
        return self.draft_evals, self.target_evals, self.baseline_evals, len(self.passes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "draft_evals": self.draft_evals,
            "target_evals": self.target_evals,
            "baseline_evals": self.baseline_evals,
            "total_evals": self.total_evals,
            "batched_passes": [[b, s] for b, s in self.passes],
        }


@dataclass(frozen=True)
class CostModel:
    """Abstract latency of one forward pass: flat up to ``saturation_batch``, then linear."""

    saturation_batch: int = DEFAULT_SATURATION_BATCH

    def __post_init__(self) -> None:
        if self.saturation_batch < 1:
            raise ConfigError(f"saturation batch must be positive, got {self.saturation_batch}")

    def pass_cost(self, batch_size: int) -> float:
        return max(1.0, batch_size / self.saturation_batch)

    def latency(self, ledger: NfeLedger) -> float:
        return float(sum(self.pass_cost(b) for b, _ in ledger.passes))


@dataclass
class RunReport:
    method: str
    ledger: NfeLedger
    cost: CostModel
    schedule_id: str
    predictor_id: str
    dim: int
    config: dict[str, Any] = field(default_factory=dict)
    rounds: int = 0
    drafted: int = 0
    accepted: int = 0
    final_error_to_reference: float | None = None
    events: list[dict[str, Any]] = field(default_factory=list)
    trajectory: list[LatentState] = field(default_factory=list, repr=False)

    @property
    def modeled_latency(self) -> float:
        return self.cost.latency(self.ledger)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.drafted if self.drafted else 0.0

    @property
    def nfe_total(self) -> int:
        return self.ledger.total_evals

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "config": self.config,
            "saturation_batch": self.cost.saturation_batch,
            "schedule_id": self.schedule_id,
            "predictor_id": self.predictor_id,
            "dim": self.dim,
            "ledger": self.ledger.to_dict(),
            "nfe_total": self.nfe_total,
            "modeled_latency": self.modeled_latency,
            "rounds": self.rounds,
            "drafted": self.drafted,
            "accepted": self.accepted,
            "acceptance_rate": self.acceptance_rate,
            "final_error_to_reference": self.final_error_to_reference,
        }


def modeled_speedup(dts: RunReport, baseline: RunReport) -> float:
    """``baseline.modeled_latency / dts.modeled_latency``.

    Raises:
        ComparisonError: the reports differ in schedule, predictor, dimension or cost model.
    """
    for attr in ("schedule_id", "predictor_id", "dim", "cost"):
        a, b = getattr(dts, attr), getattr(baseline, attr)
        if a != b:
            raise ComparisonError(f"reports differ in {attr}: {a!r} vs {b!r}")
    return baseline.modeled_latency / dts.modeled_latency


def trajectory_error(candidate: LatentState, reference: LatentState) -> float:
    """Euclidean distance between two latents at the same timestep."""
    if candidate.dim != reference.dim:
        raise DomainError(f"dimension mismatch: {candidate.dim} vs {reference.dim}")
    if candidate.t != reference.t:
        raise DomainError(f"timestep mismatch: {candidate.t} vs {reference.t}")
    return float(np.linalg.norm(candidate.x - reference.x))


class CountingPredictor(Predictor):
    """Wraps a predictor and counts every evaluation it serves, independently of any ledger."""

    def __init__(self, inner: Predictor):
        self.inner = inner
        self.calls = 0
        self.batch_calls = 0
        self._lock = threading.Lock()

    @property
    def identity(self) -> str:
        return predictor_identity(self.inner)

    def evaluate(self, x: np.ndarray, t: int) -> np.ndarray:
        with self._lock:
            self.calls += 1
        return self.inner.evaluate(x, t)

    def batch_evaluate(self, items: Sequence[tuple[np.ndarray, int]]) -> list[np.ndarray]:
        with self._lock:
            self.calls += len(items)
            self.batch_calls += 1
        return self.inner.batch_evaluate(items)
