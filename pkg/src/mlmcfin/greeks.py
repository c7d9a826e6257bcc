"""Pathwise, split-pathwise and vibrato Greeks for scalar diffusions.

Sensitivities propagate a tangent process alongside the path and
differentiate a smoothed payoff, so no payoff discontinuity is ever
differentiated directly.  The single-level likelihood-ratio estimator is
included as a reference only; its variance grows like 1/dt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy.special import ndtr, ndtri

from .models import LevelGrid
from .payoffs import PayoffError
from .randomness import sample_increments, stream

SELECTORS = ("initial_state", "volatility", "drift")
KINDS = ("value", "delta", "vega")
_FAMILIES = ("lipschitz_european", "digital", "lookback", "barrier_down_out")


def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GbmSensitivityModel:
    """Scalar lognormal model with analytic coefficient derivatives."""

    alpha: float
    beta: float
    x0: float = 1.0

    def __post_init__(self):
        if self.beta <= 0.0 or self.x0 <= 0.0:
            raise ValueError("volatility and initial state must be positive")

    # Coefficients and their state derivatives.
    def f(self, x):
        return self.alpha * x

    def g(self, x):
        return self.beta * x

    def h(self, x):
        return 0.5 * self.beta ** 2 * x

    def fx(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.alpha)

    def gx(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.beta)

    def hx(self, x):
        return np.full_like(np.asarray(x, dtype=float), 0.5 * self.beta ** 2)

    def partials(self, selector: str):
        """Parameter partials (ft, gt, ht, D0) for the chosen parameter."""
        zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
        if selector == "initial_state":
            return zero, zero, zero, 1.0
        if selector == "volatility":
            return zero, (lambda x: np.asarray(x, dtype=float)), \
                (lambda x: self.beta * np.asarray(x, dtype=float)), 0.0
        if selector == "drift":
            return (lambda x: np.asarray(x, dtype=float)), zero, zero, 0.0
        raise ValueError("unknown parameter selector %r" % selector)

    def model_spec(self):
        from .models import make_model
        return make_model("gbm", alpha=self.alpha, beta=self.beta, x0=self.x0)


def pathwise_tangent_path(gm: GbmSensitivityModel, grid: LevelGrid,
                          dw: np.ndarray, selector: str,
                          scheme: str = "euler") -> Tuple[np.ndarray, np.ndarray]:
    """Path and tangent batches driven by the given increments.

    Returns (values, tangents), each of shape (n, steps + 1).  The tangent
    obeys the state-derivative recursion of the chosen scheme, so for
    multiplicative models the initial-state tangent equals X_n / x0 exactly.
    """
    if dw.ndim == 3:
        dw = dw[:, :, 0]
    ft, gt, ht, d0 = gm.partials(selector)
    milstein = scheme == "milstein"
    if scheme not in ("euler", "milstein"):
        raise ValueError("scheme must be euler or milstein")
    n, steps = dw.shape
    dt = grid.dt
    values = np.empty((n, steps + 1))
    tangents = np.empty((n, steps + 1))
    x = np.full(n, gm.x0)
    d = np.full(n, d0)
    values[:, 0] = x
    tangents[:, 0] = d
    for k in range(steps):
        w = dw[:, k]
        mult = 1.0 + gm.fx(x) * dt + gm.gx(x) * w
        src = ft(x) * dt + gt(x) * w
        if milstein:
            quad = w * w - dt
            mult = mult + gm.hx(x) * quad
            src = src + ht(x) * quad
        xn = x + gm.f(x) * dt + gm.g(x) * w + (gm.h(x) * (w * w - dt)
                                               if milstein else 0.0)
        dn = d * mult + src
        values[:, k + 1] = xn
        tangents[:, k + 1] = dn
        x, d = xn, dn
    return values, tangents


def optimal_split_count(v1: float, v2: float, c1: float, c2: float) -> int:
    """Inner-sample count balancing outer-path and inner-split costs.

    v1 is the variance component removed by more outer paths, v2 the one
    removed by more inner splits; c1 and c2 are their unit costs.
    """
    if min(v1, v2, c1, c2) <= 0.0:
        raise ValueError("variances and costs must be positive")
    return max(int(math.ceil(math.sqrt(v2 * c1 / (v1 * c2)))), 1)


def _rng_of(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(*rng)


class _GreekSamplerBase:
    def __init__(self, gm: GbmSensitivityModel, kind: str,
                 family: str = "lipschitz_european", strike: float = 1.0,
                 barrier: float = None, discount_rate: float = 0.0,
                 horizon: float = 1.0):
        if kind not in KINDS:
            raise ValueError("kind must be one of %s" % (KINDS,))
        if family not in _FAMILIES:
            raise PayoffError("no smoothed sensitivity for family %r" % family)
        self.gm = gm
        self.kind = kind
        self.family = family
        self.strike = float(strike)
        self.barrier = barrier if barrier is None else float(barrier)
        self.discount_rate = float(discount_rate)
        self.horizon = float(horizon)
        self.selector = {"value": "initial_state", "delta": "initial_state",
                         "vega": "volatility"}[kind]
        if family == "barrier_down_out":
            if barrier is None or barrier >= gm.x0:
                raise PayoffError("down-and-out barrier must start above the "
                                  "barrier level")

    @property
    def _model(self):
        if not hasattr(self, "_model_cache"):
            self._model_cache = self.gm.model_spec()
        return self._model_cache

    def _discount(self):
        return math.exp(-self.discount_rate * self.horizon)

    def _paths(self, level, n, rng, fine_only):
        grid = LevelGrid(level, self.horizon)
        inc = sample_increments(rng, grid, self._model, n)
        vf, tf = pathwise_tangent_path(self.gm, grid, inc.fine, self.selector,
                                       scheme="milstein")
        vc = tc = None
        if inc.coarse is not None and not fine_only:
            vc, tc = pathwise_tangent_path(self.gm, grid.coarse(), inc.coarse,
                                           self.selector, scheme="milstein")
        return grid, inc, vf, tf, vc, tc


def _conditional_moments(gm, y, dy, dt_step, dw_extra, de_extra, sd_dt):
    """Mean/sd of the remaining Gaussian step and their parameter tangents.

    dw_extra is a conditioned-on Brownian contribution (0 for the fine leg,
    the re-used half increment for the coarse leg); sd_dt is the variance
    horizon of the remaining noise.
    """
    ft, gt, _, _ = de_extra
    gy = gm.g(y)
    mu = y + gm.f(y) * dt_step + gy * dw_extra
    sd = np.abs(gy) * math.sqrt(sd_dt)
    mu_t = dy * (1.0 + gm.fx(y) * dt_step + gm.gx(y) * dw_extra) \
        + ft(y) * dt_step + gt(y) * dw_extra
    sd_t = np.sign(gy) * (gm.gx(y) * dy + gt(y)) * math.sqrt(sd_dt)
    return mu, sd, mu_t, sd_t


class SmoothedGreekSampler(_GreekSamplerBase):
    """Conditional-expectation (smoothed) value/delta/vega pairs.

    The last step of each leg is replaced by its Gaussian conditional
    expectation; sensitivities follow by the chain rule through the tangent,
    so fine and coarse legs stay matched in expectation level-to-level.
    """

    def sample_pairs(self, level, n, rng, fine_only: bool = False):
        grid, inc, vf, tf, vc, tc = self._paths(level, n, rng, fine_only)
        dtf = grid.dt
        de = self.gm.partials(self.selector)
        out_f = self._leg(vf, tf, dtf, dtf, 0.0, de, inc, leg="fine")
        if vc is None:
            out_c = np.zeros_like(out_f)
            cost = float(n * grid.step_count)
        else:
            dtc = 2.0 * dtf
            dw_half = inc.fine[:, -2, 0]
            out_c = self._leg(vc, tc, dtc, dtf, dw_half, de, inc, leg="coarse")
            cost = float(n * (grid.step_count + grid.step_count // 2))
        return out_f, out_c, cost

    def _leg(self, vals, tans, dt_step, sd_dt, dw_extra, de, inc, leg):
        disc = self._discount()
        if self.family in ("lipschitz_european", "digital"):
            y, dy = vals[:, -2], tans[:, -2]
            mu, sd, mu_t, sd_t = _conditional_moments(
                self.gm, y, dy, dt_step, dw_extra, de, sd_dt)
            K = self.strike
            safe = sd > 0.0
            sdw = np.where(safe, sd, 1.0)
            d = (mu - K) / sdw
            if self.family == "lipschitz_european":
                value = np.where(safe, (mu - K) * ndtr(d) + sd * _phi(d),
                                 np.maximum(mu - K, 0.0))
                sens = np.where(safe, ndtr(d) * mu_t + _phi(d) * sd_t,
                                (mu > K) * mu_t)
            else:
                value = np.where(safe, ndtr(d), (mu > K).astype(float))
                sens = np.where(safe, _phi(d) * (mu_t - d * sd_t) / sdw, 0.0)
            return disc * (value if self.kind == "value" else sens)
        if self.family == "lookback":
            return disc * self._lookback_leg(vals, tans, sd_dt, inc, leg)
        return disc * self._barrier_leg(vals, tans, sd_dt, inc, leg)

    def _bridge_min_tangent(self, a, b, da, db, ga, ga_t, dt, logu):
        spread = (b - a) ** 2 - 2.0 * ga ** 2 * dt * logu
        s = np.sqrt(np.maximum(spread, 0.0))
        ssafe = np.where(s > 0.0, s, 1.0)
        ds = np.where(s > 0.0,
                      ((b - a) * (db - da) - 2.0 * ga * ga_t * dt * logu) / ssafe,
                      0.0)
        m = 0.5 * (a + b - s)
        dm = 0.5 * (da + db - ds)
        return m, dm

    def _segments(self, vals, tans, inc, leg):
        """Per-segment endpoint values/tangents and frozen diffusion."""
        gm = self.gm
        ft, gt, _, _ = gm.partials(self.selector)
        if leg == "fine":
            a, b = vals[:, :-1], vals[:, 1:]
            da, db = tans[:, :-1], tans[:, 1:]
            ga = gm.g(a)
            ga_t = gm.gx(a) * da + gt(a)
            logu = np.log(inc.uniforms)
            return [(a, b, da, db, ga, ga_t, logu)]
        # Coarse leg: interpolate the midpoint, then treat each half step.
        a, b = vals[:, :-1], vals[:, 1:]
        da, db = tans[:, :-1], tans[:, 1:]
        ga = gm.g(a)
        ga_t = gm.gx(a) * da + gt(a)
        dw_half = inc.fine[:, ::2, 0]
        dw_c = inc.coarse[:, :, 0]
        shift = dw_half - 0.5 * dw_c
        mid = 0.5 * (a + b) + ga * shift
        dmid = 0.5 * (da + db) + ga_t * shift
        n = vals.shape[0]
        u = inc.uniforms.reshape(n, -1, 2)
        return [(a, mid, da, dmid, ga, ga_t, np.log(u[:, :, 0])),
                (mid, b, dmid, db, ga, ga_t, np.log(u[:, :, 1]))]

    def _lookback_leg(self, vals, tans, dt, inc, leg):
        mins, dmins = [], []
        for a, b, da, db, ga, ga_t, logu in self._segments(vals, tans, inc, leg):
            m, dm = self._bridge_min_tangent(a, b, da, db, ga, ga_t, dt, logu)
            mins.append(m)
            dmins.append(dm)
        m = np.concatenate(mins, axis=1)
        dm = np.concatenate(dmins, axis=1)
        idx = np.argmin(m, axis=1)
        rows = np.arange(m.shape[0])
        value = vals[:, -1] - m[rows, idx]
        if self.kind == "value":
            return value
        return tans[:, -1] - dm[rows, idx]

    def _barrier_leg(self, vals, tans, dt, inc, leg):
        B, K = self.barrier, self.strike
        qs, dqs = [], []
        for a, b, da, db, ga, ga_t, _ in self._segments(vals, tans, inc, leg):
            num = np.maximum(a - B, 0.0) * np.maximum(b - B, 0.0)
            den = ga ** 2 * dt
            safe = den > 0.0
            denw = np.where(safe, den, 1.0)
            p = np.where(safe, np.exp(-2.0 * num / denw),
                         np.where(num > 0.0, 0.0, 1.0))
            dnum = (a > B) * da * np.maximum(b - B, 0.0) \
                + np.maximum(a - B, 0.0) * (b > B) * db
            dden = 2.0 * ga * ga_t * dt
            dp = np.where(safe,
                          p * (-2.0) * (dnum * denw - num * dden) / (denw * denw),
                          0.0)
            qs.append(1.0 - p)
            dqs.append(-dp)
        q = np.concatenate(qs, axis=1)
        dq = np.concatenate(dqs, axis=1)
        prod, dprod = _product_with_tangent(q, dq)
        xT, dT = vals[:, -1], tans[:, -1]
        value = np.maximum(xT - K, 0.0) * prod
        if self.kind == "value":
            return value
        return (xT > K) * dT * prod + np.maximum(xT - K, 0.0) * dprod


def _product_with_tangent(q, dq):
    """prod(q) and its tangent, exact even when factors hit zero."""
    zeros = q == 0.0
    zcount = zeros.sum(axis=1)
    qsafe = np.where(zeros, 1.0, q)
    prod_nonzero = np.prod(qsafe, axis=1)
    prod = np.where(zcount == 0, prod_nonzero, 0.0)
    term_all = prod_nonzero * np.sum(dq / qsafe * ~zeros, axis=1)
    term_one = prod_nonzero * np.sum(dq * zeros, axis=1)
    dprod = np.where(zcount == 0, term_all,
                     np.where(zcount == 1, term_one, 0.0))
    return prod, dprod


class SplitPathwiseSampler(_GreekSamplerBase):
    """Pathwise Greeks with the final step resampled ``split_count`` times.

    The coarse leg conditions on the first-half fine increment of its last
    step and resamples only the second half, sharing the standard-normal
    draws with the fine leg.
    """

    def __init__(self, gm, kind, split_count: int = 10, **kw):
        super().__init__(gm, kind, **kw)
        if self.family != "lipschitz_european":
            raise PayoffError("split pathwise needs a Lipschitz payoff")
        if split_count < 1:
            raise ValueError("split_count must be at least 1")
        self.split_count = int(split_count)

    def sample_pairs(self, level, n, rng, fine_only: bool = False):
        gen = _rng_of(rng)
        grid, inc, vf, tf, vc, tc = self._paths(level, n, gen, fine_only)
        z = gen.standard_normal((n, self.split_count))
        dtf = grid.dt
        de = self.gm.partials(self.selector)
        disc = self._discount()
        out_f = disc * self._leg(vf[:, -2], tf[:, -2], dtf, 0.0, dtf, z, de)
        if vc is None:
            out_c = np.zeros_like(out_f)
            cost = float(n * (grid.step_count + self.split_count))
        else:
            dw_half = inc.fine[:, -2, 0]
            out_c = disc * self._leg(vc[:, -2], tc[:, -2], 2.0 * dtf, dw_half,
                                     dtf, z, de)
            cost = float(n * (grid.step_count + grid.step_count // 2
                              + 2 * self.split_count))
        return out_f, out_c, cost

    def _leg(self, y, dy, dt_step, dw_cond, var_dt, z, de):
        ft, gt, _, _ = de
        gm = self.gm
        w = (np.asarray(dw_cond).reshape(-1, 1) if np.ndim(dw_cond) else dw_cond) \
            + z * math.sqrt(var_dt)
        yc = y[:, None]
        x = yc + gm.f(y)[:, None] * dt_step + gm.g(y)[:, None] * w
        if self.kind == "value":
            return np.maximum(x - self.strike, 0.0).mean(axis=1)
        dx = dy[:, None] * (1.0 + gm.fx(y)[:, None] * dt_step
                            + gm.gx(y)[:, None] * w) \
            + ft(y)[:, None] * dt_step + gt(y)[:, None] * w
        return ((x > self.strike) * dx).mean(axis=1)


class VibratoSampler(_GreekSamplerBase):
    """Vibrato Greeks: pathwise tangents up to the last step, then a
    Gaussian likelihood-ratio estimator over the final increment.

    Both legs share the same inner standard-normal draws.  Those draws are
    antithetic, stratified pairs: the negative half-line is stratified into
    split_count / 2 cells, one inverse-CDF draw is taken per cell, and each
    draw is mirrored with its negation.  The per-path average of the score
    z is then exactly zero and the average of z**2 - 1 has strongly reduced
    noise, while each draw still has the standard normal law, so the inner
    averages remain unbiased.  The coarse leg re-uses the first-half fine
    increment and keeps only half a step of Gaussian noise, matching the
    smoothed estimator in expectation.
    """

    def __init__(self, gm, kind, split_count: int = 10, **kw):
        super().__init__(gm, kind, **kw)
        if self.family not in ("lipschitz_european", "digital"):
            raise PayoffError("vibrato implemented for terminal-value payoffs")
        if split_count < 1:
            raise ValueError("split_count must be at least 1")
        self.split_count = int(split_count)

    def _payoff(self, x):
        if self.family == "lipschitz_european":
            return np.maximum(x - self.strike, 0.0)
        return (x > self.strike).astype(float)

    def sample_pairs(self, level, n, rng, fine_only: bool = False):
        gen = _rng_of(rng)
        grid, inc, vf, tf, vc, tc = self._paths(level, n, gen, fine_only)
        s = self.split_count
        half_count = (s + 1) // 2
        u = 0.5 * (np.arange(half_count) + gen.random((n, half_count)))
        half = ndtri(u / half_count)
        z = np.concatenate([half, -half], axis=1)[:, :s]
        dtf = grid.dt
        de = self.gm.partials(self.selector)
        disc = self._discount()
        mu, sd, mu_t, sd_t = _conditional_moments(
            self.gm, vf[:, -2], tf[:, -2], dtf, 0.0, de, dtf)
        out_f = disc * self._leg(mu, sd, mu_t, sd_t, z)
        if vc is None:
            out_c = np.zeros_like(out_f)
            cost = float(n * (grid.step_count + self.split_count))
        else:
            dw_half = inc.fine[:, -2, 0]
            mu, sd, mu_t, sd_t = _conditional_moments(
                self.gm, vc[:, -2], tc[:, -2], 2.0 * dtf, dw_half, de, dtf)
            out_c = disc * self._leg(mu, sd, mu_t, sd_t, z)
            cost = float(n * (grid.step_count + grid.step_count // 2
                              + 2 * self.split_count))
        return out_f, out_c, cost

    def _leg(self, mu, sd, mu_t, sd_t, z):
        sdw = np.where(sd > 0.0, sd, 1.0)
        x = mu[:, None] + sd[:, None] * z
        p = self._payoff(x)
        if self.kind == "value":
            return p.mean(axis=1)
        # The scores z and z**2 - 1 have zero mean, so subtracting the
        # per-path constant P(mu) leaves both estimators unbiased while
        # removing the O(1) part of the payoff from the score products.
        centred = p - self._payoff(mu)[:, None]
        score_mu = (centred * z).mean(axis=1) / sdw
        score_sd = (centred * (z * z - 1.0)).mean(axis=1) / sdw
        return mu_t * score_mu + sd_t * score_sd


def lrm_delta_single_level(gm: GbmSensitivityModel, level: int, n: int, rng,
                           strike: float = 1.0, discount_rate: float = 0.0,
                           horizon: float = 1.0) -> np.ndarray:
    """Single-level likelihood-ratio delta samples (reference estimator).

    Only the first Euler transition density depends on the initial state, so
    the score is attached there; the estimator needs no payoff smoothness
    but its variance grows like 1/dt.
    """
    gen = _rng_of(rng)
    grid = LevelGrid(level, horizon)
    model = gm.model_spec()
    inc = sample_increments(gen, grid, model, n)
    from .schemes import euler_path
    path = euler_path(model, grid, inc)
    dt = grid.dt
    x0 = gm.x0
    mu0 = x0 + gm.f(np.array([x0]))[0] * dt
    s0 = abs(gm.g(np.array([x0]))[0]) * math.sqrt(dt)
    dmu0 = 1.0 + gm.alpha * dt
    ds0 = gm.beta * math.sqrt(dt)
    x1 = path.values[:, 1]
    zres = (x1 - mu0) / s0
    score = zres / s0 * dmu0 + (zres * zres - 1.0) / s0 * ds0
    payoff = np.maximum(path.values[:, -1] - strike, 0.0)
    return math.exp(-discount_rate * horizon) * payoff * score
