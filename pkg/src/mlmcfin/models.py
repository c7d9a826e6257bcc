"""SDE model definitions and the dyadic time-grid geometry shared by all samplers.

A model is described by its drift f, diffusion g and the Milstein tensor h,
where h[i, j, k] = 0.5 * sum_l g[l, j] * d g[i, k] / d x_l.  For scalar models
the three coefficients are plain array-in / array-out callables; for
multi-dimensional models they map a state batch of shape (n, d) to arrays of
shape (n, d), (n, d, m) and (n, d, m, m) respectively.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ModelError(ValueError):
    """Unknown model name or invalid parameter set."""


@dataclass(frozen=True)
class LevelGrid:
    """Uniform grid with 2**level steps on [0, horizon].

    Successive levels halve the timestep, so step boundaries of level l-1
    are a subset of those of level l.
    """

    level: int
    horizon: float = 1.0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be non-negative")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def step_count(self) -> int:
        return 1 << self.level

    @property
    def dt(self) -> float:
        # Repeated halving keeps step_count * dt == horizon exact in binary fp.
        out = float(self.horizon)
        for _ in range(self.level):
            out *= 0.5
        return out

    def times(self) -> np.ndarray:
        t = self.dt * np.arange(self.step_count + 1)
        t[-1] = self.horizon
        return t

    def coarse(self) -> "LevelGrid":
        if self.level == 0:
            raise ValueError("level 0 has no coarse grid")
        return LevelGrid(self.level - 1, self.horizon)


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients and geometry of one SDE model."""

    dimension: int
    driver_dimension: int
    initial_state: np.ndarray
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    milstein_tensor: Callable[[np.ndarray], np.ndarray]
    correlation: np.ndarray
    label: str
    params: dict = field(default_factory=dict)
    jumps: Optional[object] = None  # JumpSpec for jump-diffusion models

    def __post_init__(self):
        om = np.asarray(self.correlation, dtype=float)
        m = self.driver_dimension
        if om.shape != (m, m):
            raise ModelError("correlation must be %d x %d" % (m, m))
        if not np.allclose(om, om.T):
            raise ModelError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(om), 1.0):
            raise ModelError("correlation matrix must have unit diagonal")
        if np.min(np.linalg.eigvalsh(om)) < -1e-12:
            raise ModelError("correlation matrix must be positive semi-definite")
        x0 = np.atleast_1d(np.asarray(self.initial_state, dtype=float))
        if x0.shape != (self.dimension,):
            raise ModelError("initial_state must have length %d" % self.dimension)
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "correlation", om)

    @property
    def scalar(self) -> bool:
        return self.dimension == 1 and self.driver_dimension == 1

    def driver_factor(self) -> np.ndarray:
        """Lower-triangular factor L with L @ L.T == correlation."""
        om = self.correlation
        try:
            return np.linalg.cholesky(om)
        except np.linalg.LinAlgError:
            # Semi-definite edge (e.g. |rho| == 1): eigen-based factor.
            w, v = np.linalg.eigh(om)
            return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def _require(params: dict, names: tuple, label: str) -> list:
    missing = [k for k in names if k not in params]
    if missing:
        raise ModelError("%s model requires parameters %s" % (label, ", ".join(missing)))
    return [float(params[k]) for k in names]


def _gbm(alpha: float, beta: float, x0: float, label: str = "gbm",
         jumps=None, extra=None) -> ModelSpec:
    if beta <= 0.0:
        raise ModelError("gbm volatility beta must be positive")
    if x0 <= 0.0:
        raise ModelError("gbm initial state must be positive")
    half_b2 = 0.5 * beta * beta
    params = {"alpha": alpha, "beta": beta, "x0": x0}
    if extra:
        params.update(extra)
    return ModelSpec(
        dimension=1,
        driver_dimension=1,
        initial_state=np.array([x0]),
        drift=lambda x: alpha * x,
        diffusion=lambda x: beta * x,
        milstein_tensor=lambda x: half_b2 * x,
        correlation=np.eye(1),
        label=label,
        params=params,
        jumps=jumps,
    )


def _clark_cameron(x0: np.ndarray) -> ModelSpec:
    def drift(x):
        return np.zeros_like(x)

    def diffusion(x):
        n = x.shape[0]
        g = np.zeros((n, 2, 2))
        g[:, 0, 0] = 1.0
        g[:, 1, 1] = x[:, 0]
        return g

    def tensor(x):
        n = x.shape[0]
        h = np.zeros((n, 2, 2, 2))
        h[:, 1, 0, 1] = 0.5  # d g_22 / d x_1 = 1, driven by w_1 inner / w_2 outer
        return h

    return ModelSpec(
        dimension=2,
        driver_dimension=2,
        initial_state=np.asarray(x0, dtype=float),
        drift=drift,
        diffusion=diffusion,
        milstein_tensor=tensor,
        correlation=np.eye(2),
        label="clark_cameron",
        params={"x0": tuple(float(v) for v in x0)},
    )


def _heston(r, kappa, theta, sigma, rho, s0, v0) -> ModelSpec:
    if sigma <= 0.0 or kappa <= 0.0 or theta <= 0.0:
        raise ModelError("heston kappa, theta, sigma must be positive")
    if not -1.0 <= rho <= 1.0:
        raise ModelError("heston correlation rho must lie in [-1, 1]")
    if s0 <= 0.0 or v0 < 0.0:
        raise ModelError("heston requires s0 > 0 and v0 >= 0")

    def drift(x):
        # Full truncation: the variance enters only through max(v, 0).
        vp = np.maximum(x[:, 1], 0.0)
        out = np.empty_like(x)
        out[:, 0] = r * x[:, 0]
        out[:, 1] = kappa * (theta - vp)
        return out

    def diffusion(x):
        n = x.shape[0]
        sq = np.sqrt(np.maximum(x[:, 1], 0.0))
        g = np.zeros((n, 2, 2))
        g[:, 0, 0] = x[:, 0] * sq
        g[:, 1, 1] = sigma * sq
        return g

    def tensor(x):
        n = x.shape[0]
        s = x[:, 0]
        vp = np.maximum(x[:, 1], 0.0)
        sq = np.sqrt(vp)
        dsq = np.where(vp > 0.0, 0.5 / np.where(vp > 0.0, sq, 1.0), 0.0)
        h = np.zeros((n, 2, 2, 2))
        h[:, 0, 0, 0] = 0.5 * s * vp            # g_11 * d g_11/d s
        h[:, 0, 1, 0] = 0.5 * sigma * sq * s * dsq  # g_22 * d g_11/d v
        h[:, 1, 1, 1] = 0.5 * sigma * sq * sigma * dsq  # g_22 * d g_22/d v
        return h

    return ModelSpec(
        dimension=2,
        driver_dimension=2,
        initial_state=np.array([s0, v0]),
        drift=drift,
        diffusion=diffusion,
        milstein_tensor=tensor,
        correlation=np.array([[1.0, rho], [rho, 1.0]]),
        label="heston",
        params={"r": r, "kappa": kappa, "theta": theta, "sigma": sigma,
                "rho": rho, "s0": s0, "v0": v0},
    )


def make_model(name: str, **params) -> ModelSpec:
    """Build one of the supported models.

    gbm:            alpha, beta, x0 (default 1.0)
    clark_cameron:  optional x0 (length-2, default (0, 0))
    heston:         r, kappa, theta, sigma, rho, s0, v0
    merton:         alpha, beta, x0, lam, mark_mu, mark_sigma
    """
    name = str(name).lower()
    if name == "gbm":
        alpha, beta = _require(params, ("alpha", "beta"), "gbm")
        x0 = float(params.get("x0", 1.0))
        return _gbm(alpha, beta, x0)
    if name == "clark_cameron":
        x0 = np.asarray(params.get("x0", (0.0, 0.0)), dtype=float)
        if x0.shape != (2,):
            raise ModelError("clark_cameron x0 must have length 2")
        return _clark_cameron(x0)
    if name == "heston":
        vals = _require(params, ("r", "kappa", "theta", "sigma", "rho", "s0", "v0"),
                        "heston")
        return _heston(*vals)
    if name == "merton":
        alpha, beta = _require(params, ("alpha", "beta"), "merton")
        x0 = float(params.get("x0", 1.0))
        lam, mu, sig = _require(params, ("lam", "mark_mu", "mark_sigma"), "merton")
        from .jumps import JumpSpec  # local import to avoid a cycle
        jspec = JumpSpec(intensity=lam, mark_mu=mu, mark_sigma=sig)
        return _gbm(alpha, beta, x0, label="merton", jumps=jspec,
                    extra={"lam": lam, "mark_mu": mu, "mark_sigma": sig})
    raise ModelError("unknown model %r" % name)
