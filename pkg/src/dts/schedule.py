"""Discrete noise schedules over integer timesteps 0..T.

``alpha_bar[t]`` is the cumulative signal retention at step ``t``; index 0 is
the noiseless endpoint and is pinned to exactly 1.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError

KINDS = ("linear-beta", "cosine", "custom")

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_COSINE_S = 0.008
# cosine betas are clipped so alpha_bar[T] stays well away from 0
MAX_COSINE_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray
    kind: str = "custom"
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if self.kind not in KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.T < 1:
            raise ConfigError(f"T must be positive, got {self.T}")
        if ab.shape != (self.T + 1,):
            raise ConfigError(f"alpha_bar must have T+1={self.T + 1} entries, got shape {ab.shape}")
        if ab[0] != 1.0:
            raise ConfigError("alpha_bar[0] must be exactly 1")
        if not np.all(np.isfinite(ab)) or np.any(ab[1:] <= 0.0) or np.any(ab[1:] > 1.0):
            raise ConfigError("alpha_bar[1:] must lie in (0, 1]")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    def __getitem__(self, t: int) -> float:
        return float(self.alpha_bar[t])

    @property
    def is_strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.alpha_bar[1:]) < 0.0))

    def to_dict(self) -> dict[str, Any]:
        """JSON form: ``{"kind", "T", "beta_start", "beta_end"}`` or ``{"kind", "T", "cosine_s"}``.

        Custom schedules carry their ``alpha_bar`` values instead.
        """
        out: dict[str, Any] = {"kind": self.kind, "T": self.T}
        if self.kind == "custom":
            out["alpha_bar"] = [float(a) for a in self.alpha_bar]
        else:
            out.update(self.params)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> NoiseSchedule:
        data = dict(data)
        kind = data.pop("kind", "linear-beta")
        try:
            T = int(data.pop("T"))
        except KeyError:
            raise ConfigError("schedule JSON needs a 'T' field") from None
        if kind == "custom":
            return cls(T=T, alpha_bar=np.asarray(data["alpha_bar"], dtype=np.float64))
        return make_schedule(kind, T, **data)

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.alpha_bar.tobytes())
        h.update(json.dumps([self.kind, self.T], sort_keys=True).encode())
        return h.hexdigest()[:16]


def linear_betas(T: int, beta_start: float, beta_end: float) -> np.ndarray:
    return np.linspace(beta_start, beta_end, T, dtype=np.float64)


def make_schedule(kind: str = "linear-beta", T: int = 100, **params: float) -> NoiseSchedule:
    """Build a schedule of ``T`` steps.

    Args:
        kind: ``"linear-beta"`` or ``"cosine"``.
        T: Number of diffusion steps, at least 2.
        **params: ``beta_start``/``beta_end`` for linear-beta, ``cosine_s`` for cosine.

    Raises:
        ConfigError: On ``T < 2``, an unknown kind, unexpected parameters, or a
            beta range outside ``0 < beta_start <= beta_end < 1``.
    """
    if not isinstance(T, (int, np.integer)) or isinstance(T, bool):
        raise ConfigError(f"T must be an integer, got {T!r}")
    T = int(T)
    if T < 2:
        raise ConfigError(f"T must be >= 2, got {T}")

    if kind == "linear-beta":
        allowed = {"beta_start", "beta_end"}
        _reject_unknown(params, allowed, kind)
        beta_start = float(params.get("beta_start", DEFAULT_BETA_START))
        beta_end = float(params.get("beta_end", DEFAULT_BETA_END))
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ConfigError(
                f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
            )
        betas = linear_betas(T, beta_start, beta_end)
        stored = {"beta_start": beta_start, "beta_end": beta_end}
    elif kind == "cosine":
        _reject_unknown(params, {"cosine_s"}, kind)
        s = float(params.get("cosine_s", DEFAULT_COSINE_S))
        if not s > 0.0:
            raise ConfigError(f"cosine offset must be positive, got {s}")
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + s) / (1.0 + s) * math.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 0.0, MAX_COSINE_BETA)
        stored = {"cosine_s": s}
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected linear-beta or cosine")

    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(1.0 - betas)
    sched = NoiseSchedule(T=T, alpha_bar=alpha_bar, kind=kind, params=stored)
    if not sched.is_strictly_decreasing:
        raise ConfigError("schedule parameters give a non-decreasing alpha_bar")
    return sched


def _reject_unknown(params: dict[str, float], allowed: set[str], kind: str) -> None:
    extra = set(params) - allowed
    if extra:
        raise ConfigError(f"unexpected parameters for {kind}: {sorted(extra)}")
