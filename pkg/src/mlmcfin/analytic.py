"""Closed-form reference prices and Greeks used for validation."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm


def black_scholes_call(x0: float, strike: float, rate: float, vol: float,
                       horizon: float) -> float:
    """European call value under lognormal dynamics with drift ``rate``."""
    if min(x0, strike, vol, horizon) <= 0.0:
        raise ValueError("black_scholes_call needs positive arguments")
    s = vol * math.sqrt(horizon)
    d1 = (math.log(x0 / strike) + (rate + 0.5 * vol * vol) * horizon) / s
    d2 = d1 - s
    return x0 * float(ndtr(d1)) - strike * math.exp(-rate * horizon) * float(ndtr(d2))


def black_scholes_delta(x0: float, strike: float, rate: float, vol: float,
                        horizon: float) -> float:
    s = vol * math.sqrt(horizon)
    d1 = (math.log(x0 / strike) + (rate + 0.5 * vol * vol) * horizon) / s
    return float(ndtr(d1))


def black_scholes_vega(x0: float, strike: float, rate: float, vol: float,
                       horizon: float) -> float:
    s = vol * math.sqrt(horizon)
    d1 = (math.log(x0 / strike) + (rate + 0.5 * vol * vol) * horizon) / s
    return x0 * float(norm.pdf(d1)) * math.sqrt(horizon)


def black_scholes_digital(x0: float, strike: float, rate: float, vol: float,
                          horizon: float) -> float:
    """Discounted cash-or-nothing digital E[exp(-rT) 1{X_T > K}]."""
    s = vol * math.sqrt(horizon)
    d2 = (math.log(x0 / strike) + (rate - 0.5 * vol * vol) * horizon) / s
    return math.exp(-rate * horizon) * float(ndtr(d2))


def merton_call_series(x0: float, strike: float, rate: float, vol: float,
                       horizon: float, lam: float, mark_mu: float,
                       mark_sigma: float, terms: int = 50,
                       tol: float = 1e-12) -> float:
    """Jump-diffusion call price by conditioning on the jump count.

    The dynamics are lognormal diffusion with drift ``rate`` plus
    multiplicative lognormal jumps Y (log Y ~ N(mark_mu, mark_sigma**2)) at
    Poisson rate ``lam``; the value is E[exp(-rate * T) (X_T - K)+] under
    those dynamics.  The series is truncated once the remainder bound drops
    below ``tol``.
    """
    total = 0.0
    lt = lam * horizon
    log_weight = -lt  # log of the Poisson(0) weight
    disc = math.exp(-rate * horizon)
    for n in range(terms):
        if n > 0:
            log_weight += math.log(lt) - math.log(n)
        weight = math.exp(log_weight)
        forward = x0 * math.exp(rate * horizon
                                + n * (mark_mu + 0.5 * mark_sigma ** 2))
        s2 = vol * vol * horizon + n * mark_sigma ** 2
        s = math.sqrt(s2)
        d1 = (math.log(forward / strike) + 0.5 * s2) / s
        d2 = d1 - s
        term = disc * (forward * ndtr(d1) - strike * ndtr(d2))
        total += weight * term
        # Remaining terms are bounded by the Poisson tail times the forward
        # growth factor; stop once that bound is negligible.
        if n >= lt + 5:
            growth = math.exp(mark_mu + 0.5 * mark_sigma ** 2)
            ratio = lt * max(growth, 1.0) / (n + 1)
            if ratio < 0.5:
                bound = weight * term * ratio / (1.0 - ratio) if term > 0 else 0.0
                if bound < tol:
                    return total
    raise ValueError("merton series did not reach tolerance %g in %d terms"
                     % (tol, terms))


def bridge_minimum_cdf(x: np.ndarray, a: float, b: float, sd2: float) -> np.ndarray:
    """CDF of the minimum of a Brownian bridge from a to b, variance sd2.

    P(min <= x) = exp(-2 (a - x)(b - x) / sd2) for x <= min(a, b).
    """
    x = np.asarray(x, dtype=float)
    out = np.where(x >= np.minimum(a, b), 1.0,
                   np.exp(-2.0 * (a - x) * (b - x) / sd2))
    return np.clip(out, 0.0, 1.0)
