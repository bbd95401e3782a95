"""Draft-and-target sampling: a speculative accelerator for deterministic DDIM.

A round drafts up to ``L`` tokens with large DDIM strides ``n1``, refines the
chunk's seeds with small strides ``n2`` in lockstep batched passes, and keeps
the longest prefix of draft tokens whose L2 distance to the matching target
token stays within the threshold. The next round starts from the target token
at the first rejected position, or from the chunk's last target token when
everything was accepted.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .diffusion import (
    EpsilonPredictor,
    LatentState,
    ddim_batch_step,
    ddim_sample,
    ddim_step,
    predictor_identity,
)
from .errors import ConfigError
from .metrics import CostModel, NfeLedger, RunReport
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

THRESHOLD_MODES = ("per-round", "per-position")


@dataclass(frozen=True)
class DtsConfig:
    n1: int = 10
    n2: int = 2
    L: int = 6
    pi0: float = 11.0
    dpi: float = 1.5
    threshold_mode: str = "per-round"
    strict: bool = False

    def __post_init__(self) -> None:
        for name in ("n1", "n2", "L"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.n2 > self.n1:
            raise ConfigError(f"target stride n2={self.n2} must not exceed draft stride n1={self.n1}")
        if self.n1 % self.n2:
            raise ConfigError(f"n1={self.n1} is not divisible by n2={self.n2}")
        if not (self.pi0 >= 0.0 and self.dpi >= 0.0):
            raise ConfigError(f"thresholds must be non-negative, got pi0={self.pi0}, dpi={self.dpi}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"threshold_mode must be one of {THRESHOLD_MODES}, got {self.threshold_mode!r}")
        if not isinstance(self.strict, bool):
            raise ConfigError(f"strict must be a boolean, got {self.strict!r}")

    def check_schedule(self, sched: NoiseSchedule) -> None:
        if sched.T % self.n1:
            raise ConfigError(f"schedule length T={sched.T} is not divisible by n1={self.n1}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DtsConfig:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class DraftChunk:
    seed: LatentState
    tokens: list[LatentState]
    chunk_index: int = 0


@dataclass(frozen=True)
class TargetBatch:
    targets: list[LatentState]


@dataclass(frozen=True)
class VerificationOutcome:
    accepted_count: int
    distances: list[float]
    thresholds_used: list[float]
    resume_state: LatentState

    @property
    def rejected(self) -> bool:
        return self.accepted_count < len(self.distances)


def draft_chunk(
    seed: LatentState,
    cfg: DtsConfig,
    eps: EpsilonPredictor,
    sched: NoiseSchedule,
    ledger: NfeLedger | None = None,
    chunk_index: int = 0,
) -> DraftChunk:
    """Sequentially draft ``min(L, seed.t / n1)`` tokens with stride ``n1`` (one batch-1 pass each)."""
    if seed.t < cfg.n1:
        raise ConfigError(f"nothing to draft: seed at t={seed.t} is below the draft stride {cfg.n1}")
    if seed.t % cfg.n1:
        raise ConfigError(f"seed timestep {seed.t} is not aligned to the draft stride {cfg.n1}")
    m = min(cfg.L, seed.t // cfg.n1)
    tokens = []
    state = seed
    for _ in range(m):
        state = ddim_step(state, cfg.n1, eps, sched, ledger, "draft")
        tokens.append(state)
    return DraftChunk(seed, tokens, chunk_index)


def target_refine(
    chunk: DraftChunk,
    cfg: DtsConfig,
    eps: EpsilonPredictor,
    sched: NoiseSchedule,
    ledger: NfeLedger | None = None,
) -> TargetBatch:
    """Refine the chunk's seeds with stride ``n2`` until each lands on its draft token's timestep.

    Seeds are the chunk seed followed by every draft token but the last. All
    sequences advance together, so this costs ``n1 / n2`` passes of batch ``m``.
    """
    if cfg.n1 % cfg.n2:
        raise ConfigError(f"n1={cfg.n1} is not divisible by n2={cfg.n2}")
    states = [chunk.seed, *chunk.tokens[:-1]]
    for _ in range(cfg.n1 // cfg.n2):
        states = ddim_batch_step(states, cfg.n2, eps, sched, ledger, "target")
    for tgt, tok in zip(states, chunk.tokens):
        if tgt.t != tok.t:
            raise ConfigError(f"target landed at t={tgt.t}, draft token is at t={tok.t}")
    return TargetBatch(states)


def thresholds_for(chunk: DraftChunk, round_index: int, cfg: DtsConfig, T: int | None = None) -> list[float]:
    m = len(chunk.tokens)
    if cfg.strict:
        return [0.0] * m
    if cfg.threshold_mode == "per-round":
        return [cfg.pi0 + round_index * cfg.dpi] * m
    if T is None:
        raise ConfigError("per-position thresholds need the schedule length T")
    # global index of a token along the full stride-n1 draft grid; the first token below T is 0
    return [cfg.pi0 + ((T - tok.t) // cfg.n1 - 1) * cfg.dpi for tok in chunk.tokens]


def verify(
    chunk: DraftChunk, batch: TargetBatch, round_index: int, cfg: DtsConfig, T: int | None = None
) -> VerificationOutcome:
    """Accept the longest prefix of draft tokens within threshold of their targets.

    ``T`` is only needed for per-position thresholds.
    """
    tokens, targets = chunk.tokens, batch.targets
    if len(tokens) != len(targets) or any(a.t != b.t for a, b in zip(tokens, targets)):
        raise ConfigError("draft chunk and target batch are not aligned")
    thresholds = thresholds_for(chunk, round_index, cfg, T)
    distances = [float(np.linalg.norm(a.x - b.x)) for a, b in zip(tokens, targets)]
    accepted = 0
    for dist, theta in zip(distances, thresholds):
        ok = dist == 0.0 if cfg.strict else dist <= theta
        if not ok:
            break
        accepted += 1
    resume = targets[accepted] if accepted < len(targets) else targets[-1]
    return VerificationOutcome(accepted, distances, thresholds, resume)


def dts_sample(
    x_T: LatentState,
    cfg: DtsConfig,
    eps: EpsilonPredictor,
    sched: NoiseSchedule,
    cost: CostModel | None = None,
) -> tuple[LatentState, RunReport]:
    """Run draft-and-target sampling from ``x_T`` down to ``t = 0``.

    Returns the final target token and a report holding the ledger, one event
    per verification round, and the committed trajectory (``x_T`` followed by
    the target tokens at every committed position).
    """
    cfg.check_schedule(sched)
    if x_T.t != sched.T:
        raise ConfigError(f"initial state must sit at t=T={sched.T}, got t={x_T.t}")
    ledger = NfeLedger()
    report = RunReport(
        method="dts",
        ledger=ledger,
        cost=cost or CostModel(),
        schedule_id=sched.fingerprint(),
        predictor_id=predictor_identity(eps),
        dim=x_T.dim,
        config=cfg.to_dict(),
    )
    traj = [x_T]
    state = x_T
    rnd = 0
    while state.t > 0:
        d0, t0, _, p0 = ledger.snapshot()
        chunk = draft_chunk(state, cfg, eps, sched, ledger, chunk_index=rnd)
        batch = target_refine(chunk, cfg, eps, sched, ledger)
        outcome = verify(chunk, batch, rnd, cfg, sched.T)
        m = len(chunk.tokens)
        committed = min(outcome.accepted_count + 1, m)
        nxt = outcome.resume_state
        if not (state.t - m * cfg.n1 <= nxt.t <= state.t - cfg.n1):
            raise AssertionError(f"round {rnd} moved from t={state.t} to t={nxt.t}")

        d1, t1, _, _ = ledger.snapshot()
        report.events.append(
            {
                "round": rnd,
                "start_t": state.t,
                "chunk_len": m,
                "distances": outcome.distances,
                "thresholds": outcome.thresholds_used,
                "accepted": outcome.accepted_count,
                "draft_nfe": d1 - d0,
                "target_nfe": t1 - t0,
                "batched_passes": [b for b, s in ledger.passes[p0:] if s == "target"],
            }
        )
        log.debug(
            "round %d: t=%d chunk=%d accepted=%d resume_t=%d",
            rnd, state.t, m, outcome.accepted_count, nxt.t,
        )
        report.drafted += m
        report.accepted += outcome.accepted_count
        traj.extend(batch.targets[:committed])
        state = nxt
        rnd += 1

    report.rounds = rnd
    report.trajectory = traj
    return state, report


def ddim_baseline(
    x_T: LatentState,
    step: int,
    eps: EpsilonPredictor,
    sched: NoiseSchedule,
    cost: CostModel | None = None,
) -> tuple[LatentState, RunReport]:
    """Plain uniform-stride DDIM wrapped in a :class:`RunReport` for cost comparisons."""
    ledger = NfeLedger()
    traj = ddim_sample(x_T, step, eps, sched, ledger, "baseline")
    report = RunReport(
        method=f"ddim-{step}",
        ledger=ledger,
        cost=cost or CostModel(),
        schedule_id=sched.fingerprint(),
        predictor_id=predictor_identity(eps),
        dim=x_T.dim,
        config={"step": step},
        trajectory=traj,
    )
    return traj[-1], report
