"""Latent states, the epsilon-predictor interface, and deterministic DDIM stepping."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ConfigError, NumericError, StepOvershootError
from .schedule import NoiseSchedule

if TYPE_CHECKING:
    from .metrics import NfeLedger


@dataclass(frozen=True, eq=False)
class LatentState:
    """A latent vector ``x`` at diffusion timestep ``t``."""

    x: np.ndarray
    t: int

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"latent at t={self.t} has non-finite entries")
        if self.t < 0:
            raise ConfigError(f"timestep must be >= 0, got {self.t}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", int(self.t))

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def same_as(self, other: LatentState) -> bool:
        """Bit-exact equality of timestep and latent."""
        return self.t == other.t and np.array_equal(self.x, other.x)


@runtime_checkable
class EpsilonPredictor(Protocol):
    def evaluate(self, x: np.ndarray, t: int) -> np.ndarray: ...

    def batch_evaluate(self, items: Sequence[tuple[np.ndarray, int]]) -> list[np.ndarray]: ...


class Predictor:
    """Base class for epsilon predictors.

    Subclasses implement :meth:`evaluate`. The default :meth:`batch_evaluate`
    maps it over the batch so batched and element-wise results are bit-identical.
    """

    name = "predictor"

    def evaluate(self, x: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def batch_evaluate(self, items: Sequence[tuple[np.ndarray, int]]) -> list[np.ndarray]:
        return [self.evaluate(x, t) for x, t in items]

    @property
    def identity(self) -> str:
        return self.name


class FunctionPredictor(Predictor):
    """Wrap a plain ``fn(x, t) -> eps`` callable."""

    def __init__(self, fn: Callable[[np.ndarray, int], np.ndarray], name: str = "function"):
        self.fn = fn
        self.name = name

    def evaluate(self, x: np.ndarray, t: int) -> np.ndarray:
        return np.asarray(self.fn(x, t), dtype=np.float64)


def predictor_identity(eps: EpsilonPredictor) -> str:
    return getattr(eps, "identity", None) or type(eps).__name__


def ddim_update(x: np.ndarray, e: np.ndarray, t: int, s: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta=0) DDIM move from timestep ``t`` to ``s < t`` given the noise estimate ``e``.

    Written as ``r*x + (sqrt(1-a_s) - r*sqrt(1-a_t))*e`` with ``r = sqrt(a_s)/sqrt(a_t)``,
    which is the usual predict-x0-then-renoise update rearranged so equal
    alpha_bar values give ``r == 1.0`` exactly.
    """
    a_t = sched[t]
    a_s = sched[s]
    r = math.sqrt(a_s) / math.sqrt(a_t)
    return r * x + (math.sqrt(1.0 - a_s) - r * math.sqrt(1.0 - a_t)) * e


def _check_eps(e: np.ndarray, x: np.ndarray, t: int) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.shape != x.shape:
        raise NumericError(f"predictor returned shape {e.shape} for latent of shape {x.shape}")
    if not np.all(np.isfinite(e)):
        raise NumericError(f"predictor returned non-finite output at t={t}")
    return e


def _check_step(state: LatentState, n: int, sched: NoiseSchedule) -> None:
    if n < 1:
        raise ConfigError(f"step size must be positive, got {n}")
    if state.t > sched.T:
        raise ConfigError(f"timestep {state.t} exceeds schedule length {sched.T}")
    if n > state.t:
        raise StepOvershootError(f"step {n} from t={state.t} overshoots t=0")


def ddim_step(
    state: LatentState,
    n: int,
    eps: EpsilonPredictor,
    sched: NoiseSchedule,
    ledger: NfeLedger | None = None,
    stage: str = "baseline",
) -> LatentState:
    """Take one DDIM step of stride ``n``, consuming exactly one predictor call.

    The call is recorded in ``ledger`` (if given) as a batch-1 pass of ``stage``.
    """
    _check_step(state, n, sched)
    e = _check_eps(eps.evaluate(state.x, state.t), state.x, state.t)
    if ledger is not None:
        ledger.record_pass(1, stage)
    return LatentState(ddim_update(state.x, e, state.t, state.t - n, sched), state.t - n)


def ddim_batch_step(
    states: Sequence[LatentState],
    n: int,
    eps: EpsilonPredictor,
    sched: NoiseSchedule,
    ledger: NfeLedger | None = None,
    stage: str = "target",
) -> list[LatentState]:
    """Advance every state by stride ``n`` in a single batched predictor pass."""
    for st in states:
        _check_step(st, n, sched)
    outs = eps.batch_evaluate([(st.x, st.t) for st in states])
    if len(outs) != len(states):
        raise NumericError(f"batch_evaluate returned {len(outs)} outputs for {len(states)} inputs")
    if ledger is not None:
        ledger.record_pass(len(states), stage)
    return [
        LatentState(ddim_update(st.x, _check_eps(e, st.x, st.t), st.t, st.t - n, sched), st.t - n)
        for st, e in zip(states, outs)
    ]


def ddim_sample(
    x_T: LatentState,
    step: int,
    eps: EpsilonPredictor,
    sched: NoiseSchedule,
    ledger: NfeLedger | None = None,
    stage: str = "baseline",
) -> list[LatentState]:
    """Uniform-stride DDIM from ``t = T`` down to 0; returns every visited state including ``x_T``."""
    if x_T.t != sched.T:
        raise ConfigError(f"initial state must sit at t=T={sched.T}, got t={x_T.t}")
    if step < 1 or sched.T % step:
        raise ConfigError(f"stride {step} does not divide T={sched.T}")
    traj = [x_T]
    state = x_T
    while state.t > 0:
        state = ddim_step(state, step, eps, sched, ledger, stage)
        traj.append(state)
    return traj


def initial_noise(d: int, seed: int, T: int) -> LatentState:
    """Standard-normal ``x_T`` from a seeded generator."""
    rng = np.random.default_rng(seed)
    return LatentState(rng.standard_normal(d), T)


def trajectory_to_csv(traj: Iterable[LatentState]) -> str:
    """CSV with columns ``t, x_0, ..., x_{d-1}``; floats written with ``repr`` precision."""
    traj = list(traj)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    d = traj[0].dim if traj else 0
    writer.writerow(["t"] + [f"x_{i}" for i in range(d)])
    for st in traj:
        writer.writerow([st.t] + [repr(float(v)) for v in st.x])
    return buf.getvalue()


def trajectory_from_csv(text: str) -> list[LatentState]:
    rows = list(csv.reader(io.StringIO(text)))
    return [LatentState(np.array([float(v) for v in row[1:]]), int(row[0])) for row in rows[1:]]
