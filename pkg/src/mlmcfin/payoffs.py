"""Coupled payoff estimators for each option family.

Every estimator returns a (fine, coarse) pair of per-sample values.  The
fine and coarse legs may differ (conditional smoothing, bridge minima,
midpoint interpolation) but are constructed so that the expectation of the
level-l fine leg equals the expectation of the level-l coarse leg used one
level up, which keeps the telescoping sum unbiased.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .randomness import IncrementSet
from .schemes import CoupledPaths, bridge_midpoints

log = logging.getLogger(__name__)

#: Mean of the minimum of a standard Brownian bridge; offset used by the
#: Euler lookback estimator.  Fixed by construction, not tunable.
BETA_STAR = 0.5826

FAMILIES = (
    "lipschitz_european",
    "asian",
    "lookback",
    "digital",
    "barrier_down_out",
    "barrier_up_out",
    "barrier_down_in",
    "barrier_up_in",
)

_SMOOTHED = {"lookback", "digital", "barrier_down_out"}

SCHEME_MODES = ("euler", "milstein_smoothed", "antithetic")


class PayoffError(ValueError):
    """Invalid payoff specification or unsupported combination."""


@dataclass(frozen=True)
class PayoffSpec:
    """Payoff family plus its parameters.

    ``terminal_function`` overrides the default call payoff max(x - K, 0)
    for the european and barrier families.  ``discount_rate`` discounts both
    legs by exp(-rate * horizon).  ``component`` picks the state coordinate
    the payoff reads for multi-dimensional models.
    """

    family: str
    strike: Optional[float] = None
    barrier: Optional[float] = None
    terminal_function: Optional[Callable[[np.ndarray], np.ndarray]] = None
    scheme_mode: str = "euler"
    component: int = 0
    discount_rate: float = 0.0
    beta_star: float = BETA_STAR

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise PayoffError("unknown payoff family %r" % self.family)
        if self.scheme_mode not in SCHEME_MODES:
            raise PayoffError("unknown scheme mode %r" % self.scheme_mode)
        if self.beta_star != BETA_STAR:
            raise PayoffError("beta_star is fixed at %r" % BETA_STAR)
        needs_strike = (self.family in ("lipschitz_european", "asian", "digital")
                        or self.family.startswith("barrier_"))
        if needs_strike and self.terminal_function is None:
            if self.strike is None or self.strike <= 0.0:
                raise PayoffError("family %r needs a positive strike" % self.family)
        if self.family.startswith("barrier_") and self.barrier is None:
            raise PayoffError("barrier families need a barrier level")
        if self.scheme_mode == "milstein_smoothed" and self.family not in (
                _SMOOTHED | {"lipschitz_european", "asian"}):
            raise PayoffError(
                "no smoothed estimator for family %r" % self.family)
        if self.scheme_mode == "antithetic" and self.family in _SMOOTHED:
            raise PayoffError(
                "antithetic coupling is only defined for Lipschitz payoffs")

    def terminal(self, x: np.ndarray) -> np.ndarray:
        if self.terminal_function is not None:
            return self.terminal_function(x)
        return np.maximum(x - self.strike, 0.0)


@dataclass
class PayoffPair:
    """Per-sample fine and coarse payoff values plus their timestep cost."""

    fine: np.ndarray
    coarse: np.ndarray
    cost_units: float = 0.0


def _values(path, spec: PayoffSpec) -> np.ndarray:
    v = path.values
    if v.ndim == 3:
        return v[:, :, spec.component]
    return v


def _discount(spec: PayoffSpec, horizon: float) -> float:
    return float(np.exp(-spec.discount_rate * horizon))


def _zeros_like_fine(pf: np.ndarray) -> np.ndarray:
    return np.zeros_like(pf)


def european_pair(paths: CoupledPaths, spec: PayoffSpec) -> PayoffPair:
    """Terminal-value payoff; in antithetic mode the fine leg averages the
    plain and swapped-increment paths."""
    disc = _discount(spec, paths.fine.times[-1])
    vf = _values(paths.fine, spec)
    pf = spec.terminal(vf[:, -1])
    if paths.antithetic is not None:
        va = _values(paths.antithetic, spec)
        pf = 0.5 * (pf + spec.terminal(va[:, -1]))
    if paths.coarse is None:
        return PayoffPair(disc * pf, _zeros_like_fine(pf))
    vc = _values(paths.coarse, spec)
    return PayoffPair(disc * pf, disc * spec.terminal(vc[:, -1]))


def _trapezoid_average(values: np.ndarray, dt: float, horizon: float) -> np.ndarray:
    inner = values[:, 1:-1].sum(axis=1)
    return (0.5 * (values[:, 0] + values[:, -1]) + inner) * dt / horizon


def asian_pair(paths: CoupledPaths, spec: PayoffSpec) -> PayoffPair:
    """Arithmetic-average call on the trapezoidal path average.

    In antithetic mode the fine leg weights each coarse interval by
    (X_n + 2 X_mid + X_{n+1}) / 4, which is exactly the fine-grid trapezoid.
    """
    horizon = paths.fine.times[-1]
    disc = _discount(spec, horizon)
    dtf = paths.fine.dt
    vf = _values(paths.fine, spec)
    pf = np.maximum(_trapezoid_average(vf, dtf, horizon) - spec.strike, 0.0)
    if paths.antithetic is not None:
        va = _values(paths.antithetic, spec)
        pa = np.maximum(_trapezoid_average(va, dtf, horizon) - spec.strike, 0.0)
        pf = 0.5 * (pf + pa)
    if paths.coarse is None:
        return PayoffPair(disc * pf, _zeros_like_fine(pf))
    vc = _values(paths.coarse, spec)
    avg_c = _trapezoid_average(vc, paths.coarse.dt, horizon)
    return PayoffPair(disc * pf, disc * np.maximum(avg_c - spec.strike, 0.0))


def lookback_pair_euler(paths: CoupledPaths, spec: PayoffSpec) -> PayoffPair:
    """Lookback put-style payoff X_T - min X with the discrete-minimum offset.

    Each leg subtracts beta_star * g(X_n) * sqrt(dt) from its own node
    values before taking the minimum; both legs use the same estimator, so
    their expectations match level-to-level by construction.
    """
    disc = _discount(spec, paths.fine.times[-1])
    g = paths.model.diffusion

    def leg(path):
        v = _values(path, spec)
        shifted = v - spec.beta_star * g(v) * np.sqrt(path.dt)
        return v[:, -1] - shifted.min(axis=1)

    pf = leg(paths.fine)
    if paths.coarse is None:
        return PayoffPair(disc * pf, _zeros_like_fine(pf))
    return PayoffPair(disc * pf, disc * leg(paths.coarse))


def _bridge_minimum(a, b, g_left, dt, uniforms):
    """Sampled minimum of a Brownian bridge from a to b over one step."""
    spread = (b - a) ** 2 - 2.0 * g_left ** 2 * dt * np.log(uniforms)
    return 0.5 * (a + b - np.sqrt(np.maximum(spread, 0.0)))


def lookback_pair_milstein(paths: CoupledPaths, spec: PayoffSpec,
                           inc: IncrementSet) -> PayoffPair:
    """Smoothed lookback: sampled bridge minima on every fine step.

    The coarse leg interpolates each coarse step at its midpoint with a
    Brownian bridge, then samples the two half-step minima with the same
    uniforms as the fine leg and the diffusion frozen at the coarse node.
    """
    disc = _discount(spec, paths.fine.times[-1])
    g = paths.model.diffusion
    dtf = paths.fine.dt
    vf = _values(paths.fine, spec)
    a = vf[:, :-1]
    b = vf[:, 1:]
    mins = _bridge_minimum(a, b, g(a), dtf, inc.uniforms)
    pf = vf[:, -1] - mins.min(axis=1)
    if paths.coarse is None:
        return PayoffPair(disc * pf, _zeros_like_fine(pf))

    vc = _values(paths.coarse, spec)
    ac = vc[:, :-1]
    bc = vc[:, 1:]
    gc = g(ac)
    mid = bridge_midpoints(paths, inc)
    n = vf.shape[0]
    u = inc.uniforms.reshape(n, -1, 2)
    m1 = _bridge_minimum(ac, mid, gc, dtf, u[:, :, 0])
    m2 = _bridge_minimum(mid, bc, gc, dtf, u[:, :, 1])
    pc = vc[:, -1] - np.minimum(m1, m2).min(axis=1)
    return PayoffPair(disc * pf, disc * pc)


def _crossing_probability(a, b, barrier, g_left, dt, direction: str):
    """One-step probability that the bridge crosses the barrier."""
    if direction == "down":
        num = np.maximum(a - barrier, 0.0) * np.maximum(b - barrier, 0.0)
    else:
        num = np.maximum(barrier - a, 0.0) * np.maximum(barrier - b, 0.0)
    den = g_left ** 2 * dt
    safe = den > 0.0
    if not np.all(safe):
        degenerate = (~safe) & (num > 0.0)
        if np.any(degenerate):
            log.debug("degenerate barrier step: zero diffusion with both "
                      "endpoints on the surviving side (%d samples)",
                      int(np.count_nonzero(degenerate.any(axis=1)
                                           if degenerate.ndim > 1 else degenerate)))
    p = np.where(safe, np.exp(-2.0 * num / np.where(safe, den, 1.0)), 0.0)
    # Zero diffusion and an endpoint at/through the barrier: certain knock-out.
    p = np.where(~safe & (num <= 0.0), 1.0, p)
    return p


def barrier_pair(paths: CoupledPaths, spec: PayoffSpec,
                 inc: IncrementSet) -> PayoffPair:
    """Smoothed down-and-out barrier: terminal payoff times the product of
    one-step bridge survival probabilities.

    The fine leg multiplies over every fine step; the coarse leg splits each
    coarse step at the interpolated midpoint and multiplies both half-step
    survival factors, with the diffusion frozen at the coarse node.
    """
    if spec.family != "barrier_down_out":
        raise PayoffError("smoothed barrier implemented for down-and-out only")
    disc = _discount(spec, paths.fine.times[-1])
    g = paths.model.diffusion
    B = spec.barrier
    dtf = paths.fine.dt
    vf = _values(paths.fine, spec)
    a = vf[:, :-1]
    b = vf[:, 1:]
    p = _crossing_probability(a, b, B, g(a), dtf, "down")
    pf = spec.terminal(vf[:, -1]) * np.prod(1.0 - p, axis=1)
    if paths.coarse is None:
        return PayoffPair(disc * pf, _zeros_like_fine(pf))

    vc = _values(paths.coarse, spec)
    ac = vc[:, :-1]
    bc = vc[:, 1:]
    gc = g(ac)
    mid = bridge_midpoints(paths, inc)
    p1 = _crossing_probability(ac, mid, B, gc, dtf, "down")
    p2 = _crossing_probability(mid, bc, B, gc, dtf, "down")
    pc = spec.terminal(vc[:, -1]) * np.prod((1.0 - p1) * (1.0 - p2), axis=1)
    return PayoffPair(disc * pf, disc * pc)


def barrier_pair_euler(paths: CoupledPaths, spec: PayoffSpec) -> PayoffPair:
    """Indicator barrier payoffs (all four knock variants) on grid minima."""
    disc = _discount(spec, paths.fine.times[-1])
    _, side, knock = spec.family.split("_")
    B = spec.barrier

    def leg(path):
        v = _values(path, spec)
        crossed = (v.min(axis=1) <= B) if side == "down" else (v.max(axis=1) >= B)
        alive = ~crossed if knock == "out" else crossed
        return spec.terminal(v[:, -1]) * alive.astype(float)

    pf = leg(paths.fine)
    if paths.coarse is None:
        return PayoffPair(disc * pf, _zeros_like_fine(pf))
    return PayoffPair(disc * pf, disc * leg(paths.coarse))


def digital_pair_euler(paths: CoupledPaths, spec: PayoffSpec) -> PayoffPair:
    """Indicator digital payoff 1{X_T > K} on both legs."""
    disc = _discount(spec, paths.fine.times[-1])
    vf = _values(paths.fine, spec)
    pf = (vf[:, -1] > spec.strike).astype(float)
    if paths.coarse is None:
        return PayoffPair(disc * pf, _zeros_like_fine(pf))
    vc = _values(paths.coarse, spec)
    return PayoffPair(disc * pf, disc * (vc[:, -1] > spec.strike).astype(float))


def _conditional_digital(y, drift_term, extra, sd, threshold):
    """Phi((y + drift + extra - K) / sd) with the zero-diffusion limit."""
    centre = y + drift_term + extra - threshold
    safe = sd > 0.0
    out = np.where(safe, ndtr(centre / np.where(safe, sd, 1.0)),
                   (centre > 0.0).astype(float))
    return out


def digital_pair(paths: CoupledPaths, spec: PayoffSpec,
                 inc: IncrementSet) -> PayoffPair:
    """Smoothed digital: conditional expectation over the final fine step.

    The fine leg conditions on the penultimate fine state; the coarse leg
    conditions on the penultimate coarse state plus the re-used fine
    increment over the first half of the last coarse step, so both legs see
    a remaining Gaussian with standard deviation |g| * sqrt(dt_fine).
    """
    disc = _discount(spec, paths.fine.times[-1])
    f, g = paths.model.drift, paths.model.diffusion
    dtf = paths.fine.dt
    K = spec.strike
    vf = _values(paths.fine, spec)
    y = vf[:, -2]
    pf = _conditional_digital(y, f(y) * dtf, 0.0, np.abs(g(y)) * np.sqrt(dtf), K)
    if paths.coarse is None:
        return PayoffPair(disc * pf, _zeros_like_fine(pf))

    dtc = paths.coarse.dt
    vc = _values(paths.coarse, spec)
    yc = vc[:, -2]
    dw_half = inc.fine[:, -2, 0]
    pc = _conditional_digital(yc, f(yc) * dtc, g(yc) * dw_half,
                              np.abs(g(yc)) * np.sqrt(dtf), K)
    return PayoffPair(disc * pf, disc * pc)


def payoff_pair(paths: CoupledPaths, spec: PayoffSpec,
                inc: IncrementSet) -> PayoffPair:
    """Dispatch to the estimator for (family, scheme_mode)."""
    family, mode = spec.family, spec.scheme_mode
    if family in _SMOOTHED and mode == "milstein_smoothed" and not paths.model.scalar:
        raise PayoffError("smoothed estimators require a scalar model")
    if family == "lipschitz_european":
        pair = european_pair(paths, spec)
    elif family == "asian":
        pair = asian_pair(paths, spec)
    elif family == "lookback":
        pair = (lookback_pair_milstein(paths, spec, inc)
                if mode == "milstein_smoothed" else lookback_pair_euler(paths, spec))
    elif family == "digital":
        pair = (digital_pair(paths, spec, inc)
                if mode == "milstein_smoothed" else digital_pair_euler(paths, spec))
    elif family == "barrier_down_out" and mode == "milstein_smoothed":
        pair = barrier_pair(paths, spec, inc)
    elif family.startswith("barrier_"):
        pair = barrier_pair_euler(paths, spec)
    else:  # pragma: no cover - guarded by PayoffSpec validation
        raise PayoffError("no estimator for %r in mode %r" % (family, mode))

    nf = paths.fine.step_count
    cost = nf
    if paths.coarse is not None:
        cost += paths.coarse.step_count
    if paths.antithetic is not None:
        cost += nf
    pair.cost_units = float(cost * paths.fine.sample_count)
    return pair
