"""Closed-form epsilon predictors for isotropic Gaussian-mixture data.

For data ``x_0 ~ sum_i w_i N(mu_i, var_i I)`` and the forward process
``x_t = sqrt(a_t) x_0 + sqrt(1 - a_t) eps``, the Bayes-optimal noise estimate is

    eps_hat(x, t) = (x - sqrt(a_t) E[x_0 | x_t = x]) / sqrt(1 - a_t)

and ``E[x_0 | x_t]`` is available in closed form per component.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .diffusion import Predictor
from .errors import ConfigError, DomainError, NumericError
from .schedule import NoiseSchedule

MIN_ORACLE_SAMPLES = 10_000
MIN_ORACLE_ESS = 100.0


@dataclass(frozen=True, eq=False)
class GmmSpec:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, d)
    variances: np.ndarray  # (K,)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        k = w.shape[0]
        if k < 1:
            raise ConfigError("mixture needs at least one component")
        if mu.shape[0] != k or var.shape[0] != k:
            raise ConfigError(f"got {k} weights, {mu.shape[0]} means, {var.shape[0]} variances")
        if np.any(w <= 0.0) or np.any(w > 1.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"weights must lie in (0, 1] and sum to 1, got sum {w.sum()!r}")
        if not np.all(np.isfinite(mu)):
            raise ConfigError("means must be finite")
        if not np.all(np.isfinite(var)) or np.any(var <= 0.0):
            raise ConfigError("variances must be positive")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "d": self.d,
            "components": [
                {"w": float(w), "mu": [float(v) for v in mu], "var": float(var)}
                for w, mu, var in zip(self.weights, self.means, self.variances)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GmmSpec:
        try:
            comps = data["components"]
            spec = cls(
                weights=np.array([c["w"] for c in comps], dtype=np.float64),
                means=np.array([c["mu"] for c in comps], dtype=np.float64),
                variances=np.array([c["var"] for c in comps], dtype=np.float64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed mixture JSON: {exc}") from exc
        if "d" in data and int(data["d"]) != spec.d:
            raise ConfigError(f"mixture declares d={data['d']} but means have dimension {spec.d}")
        return spec

    @classmethod
    def load(cls, path: str | Path) -> GmmSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def unit_gaussian(d: int) -> GmmSpec:
    return GmmSpec(np.ones(1), np.zeros((1, d)), np.ones(1))


def corner_mixture(d: int, var: float = 0.05, scale: float = 1.0) -> GmmSpec:
    """Four equal-weight components on corners of the ``[-scale, scale]^d`` hypercube.

    Corner ``k`` sets coordinate ``j`` to ``+scale`` when bit ``j % 2`` of ``k`` is
    set, so in ``d = 2`` these are exactly the four corners of the square.
    """
    if d < 2:
        raise ConfigError("corner mixture needs d >= 2")
    means = np.array(
        [[scale if (k >> (j % 2)) & 1 else -scale for j in range(d)] for k in range(4)],
        dtype=np.float64,
    )
    return GmmSpec(np.full(4, 0.25), means, np.full(4, var))


def random_mixture(rng: np.random.Generator, d: int, k: int) -> GmmSpec:
    """Random mixture for property tests: Dirichlet weights, means in [-2, 2], variances in [0.05, 1]."""
    w = rng.dirichlet(np.full(k, 2.0))
    w = np.maximum(w, 1e-3)
    w /= w.sum()
    return GmmSpec(w, rng.uniform(-2.0, 2.0, size=(k, d)), rng.uniform(0.05, 1.0, size=k))


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if t < 1 or t > sched.T:
        raise DomainError(f"predictor is defined on 1 <= t <= {sched.T}, got t={t}")


def posterior_mean(spec: GmmSpec, x: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Exact ``E[x_0 | x_t = x]`` under the mixture."""
    _check_t(t, sched)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.d,):
        raise DomainError(f"expected latent of dimension {spec.d}, got shape {x.shape}")
    a = sched[t]
    sa = math.sqrt(a)
    var_t = a * spec.variances + (1.0 - a)  # marginal variance of x_t per component
    resid = x[None, :] - sa * spec.means
    sq = np.einsum("kd,kd->k", resid, resid)
    log_r = np.log(spec.weights) - 0.5 * spec.d * np.log(2.0 * math.pi * var_t) - 0.5 * sq / var_t
    top = np.max(log_r)
    if not np.isfinite(top):
        raise NumericError(f"all mixture responsibilities underflowed at t={t}")
    r = np.exp(log_r - top)
    r /= r.sum()
    gain = sa * spec.variances / var_t
    comp_means = spec.means + gain[:, None] * resid
    return r @ comp_means


def gmm_epsilon(spec: GmmSpec, x: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Bayes-optimal noise estimate for the mixture at ``(x, t)``.

    Raises:
        DomainError: ``t`` outside ``[1, T]`` or dimension mismatch.
        NumericError: every component responsibility underflows.
    """
    m = posterior_mean(spec, x, t, sched)
    a = sched[t]
    return (np.asarray(x, dtype=np.float64) - math.sqrt(a) * m) / math.sqrt(1.0 - a)


class GmmPredictor(Predictor):
    """Epsilon predictor backed by :func:`gmm_epsilon`."""

    def __init__(self, spec: GmmSpec, sched: NoiseSchedule):
        self.spec = spec
        self.sched = sched
        self.name = f"gmm:{spec.fingerprint()}"

    def evaluate(self, x: np.ndarray, t: int) -> np.ndarray:
        return gmm_epsilon(self.spec, x, t, self.sched)


class UnitGaussianPredictor(Predictor):
    """Exact predictor for ``x_0 ~ N(0, I)``: ``eps_hat(x, t) = sqrt(1 - a_t) x``."""

    name = "unit-gaussian"

    def __init__(self, sched: NoiseSchedule):
        self.sched = sched

    def evaluate(self, x: np.ndarray, t: int) -> np.ndarray:
        _check_t(t, self.sched)
        return math.sqrt(1.0 - self.sched[t]) * np.asarray(x, dtype=np.float64)


def ddim_multiplier(sched: NoiseSchedule, t: int, s: int) -> float:
    """Scalar factor of a DDIM move ``t -> s`` under :class:`UnitGaussianPredictor`."""
    a_t, a_s = sched[t], sched[s]
    return math.sqrt(a_s * a_t) + math.sqrt((1.0 - a_s) * (1.0 - a_t))


@dataclass(frozen=True)
class OracleEstimate:
    estimate: np.ndarray
    stderr: np.ndarray
    ess: float
    warning: str | None = None

    @property
    def reliable(self) -> bool:
        return self.warning is None

    def __iter__(self):
        # unpacks as (estimate, stderr)
        return iter((self.estimate, self.stderr))


def mc_posterior_oracle(
    spec: GmmSpec,
    x: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    samples: int = 1_000_000,
    seed: int = 0,
) -> OracleEstimate:
    """Importance-weighted Monte-Carlo estimate of ``E[x_0 | x_t = x]``.

    Draws ``x_0`` from the mixture prior and weights each draw by the forward
    likelihood ``N(x; sqrt(a_t) x_0, (1 - a_t) I)``. The standard error uses the
    delta-method variance of the self-normalised estimator.
    """
    if samples < MIN_ORACLE_SAMPLES:
        raise ConfigError(f"oracle needs at least {MIN_ORACLE_SAMPLES} samples, got {samples}")
    _check_t(t, sched)
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    comp = rng.choice(spec.n_components, size=samples, p=spec.weights)
    x0 = spec.means[comp] + np.sqrt(spec.variances[comp])[:, None] * rng.standard_normal((samples, spec.d))

    a = sched[t]
    resid = x[None, :] - math.sqrt(a) * x0
    log_w = -0.5 * np.einsum("nd,nd->n", resid, resid) / (1.0 - a)
    w = np.exp(log_w - log_w.max())
    w_sum = w.sum()
    est = (w @ x0) / w_sum
    var = (w**2 @ (x0 - est) ** 2) / w_sum**2
    ess = float(w_sum**2 / np.sum(w**2))
    note = None
    if ess < MIN_ORACLE_ESS:
        note = f"effective sample size {ess:.1f} < {MIN_ORACLE_ESS:.0f}; estimate unreliable"
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    return OracleEstimate(est, np.sqrt(var), ess, note)


def oracle_epsilon(
    spec: GmmSpec, x: np.ndarray, t: int, sched: NoiseSchedule, samples: int = 1_000_000, seed: int = 0
) -> tuple[np.ndarray, np.ndarray, OracleEstimate]:
    """Monte-Carlo estimate of ``eps_hat`` and its standard error, via the posterior-mean oracle."""
    res = mc_posterior_oracle(spec, x, t, sched, samples, seed)
    a = sched[t]
    k = math.sqrt(a) / math.sqrt(1.0 - a)
    eps = (np.asarray(x, dtype=np.float64) - math.sqrt(a) * res.estimate) / math.sqrt(1.0 - a)
    return eps, k * res.stderr, res
