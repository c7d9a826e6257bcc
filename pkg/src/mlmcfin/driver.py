"""Adaptive multilevel Monte Carlo driver.

The driver owns sample allocation (optimal per-level counts under a fixed
variance budget), the weak-error-based stopping rule, convergence-rate
fitting, and deterministic chunked (optionally threaded) sampling.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .models import LevelGrid


class DriverError(RuntimeError):
    """Driver invariant violated or fit underdetermined."""


@dataclass
class LevelStats:
    """Accumulated statistics for one correction level."""

    level: int
    n: int = 0
    sum_diff: float = 0.0
    sum_diff_sq: float = 0.0
    sum_fine: float = 0.0
    sum_fine_sq: float = 0.0
    cost: float = 0.0

    def add(self, fine: np.ndarray, coarse: np.ndarray, cost_units: float) -> None:
        diff = fine - coarse
        self.n += diff.shape[0]
        self.sum_diff += float(diff.sum())
        self.sum_diff_sq += float((diff * diff).sum())
        self.sum_fine += float(fine.sum())
        self.sum_fine_sq += float((fine * fine).sum())
        self.cost += float(cost_units)

    @property
    def mean_diff(self) -> float:
        return self.sum_diff / self.n if self.n else float("nan")

    @property
    def var_diff(self) -> float:
        if self.n < 2:
            return float("nan")
        num = self.sum_diff_sq - self.sum_diff * self.sum_diff / self.n
        return max(num / (self.n - 1), 0.0)

    @property
    def mean_fine(self) -> float:
        return self.sum_fine / self.n if self.n else float("nan")

    @property
    def var_fine(self) -> float:
        if self.n < 2:
            return float("nan")
        num = self.sum_fine_sq - self.sum_fine * self.sum_fine / self.n
        return max(num / (self.n - 1), 0.0)


@dataclass
class RateFit:
    """Fitted decay/growth exponents with standard errors and constants."""

    alpha: float
    beta: float
    gamma: float
    alpha_se: float
    beta_se: float
    gamma_se: float
    c1: float
    c2: float
    c3: float


@dataclass
class MlmcConfig:
    target_rms: float
    seed: int = 0
    initial_samples: int = 100
    min_level: int = 3
    max_level: int = 14
    alpha_hint: Optional[float] = None
    variance_fraction: float = 0.5
    chunk_size: int = 1 << 14
    threads: int = 1

    def __post_init__(self):
        if not self.target_rms > 0.0:
            raise DriverError("target_rms must be positive")
        if not 0.0 < self.variance_fraction < 1.0:
            raise DriverError("variance_fraction must lie in (0, 1)")
        if self.min_level < 1 or self.max_level < self.min_level:
            raise DriverError("need 1 <= min_level <= max_level")
        if self.initial_samples < 2:
            raise DriverError("initial_samples must be at least 2")


@dataclass
class MlmcResult:
    estimate: float
    std_error: float
    target_rms: float
    levels: List[LevelStats]
    rates: Optional[RateFit]
    total_cost: float
    bias_estimate: float
    converged: bool


@dataclass
class StandardMcResult:
    estimate: float
    std_error: float
    level: int
    n: int
    total_cost: float


def optimal_samples(variances: Sequence[float], dts: Sequence[float],
                    eps: float, variance_fraction: float = 0.5) -> np.ndarray:
    """Per-level sample counts minimising cost under the variance budget.

    Minimises sum N_l / dt_l subject to sum V_l / N_l <= variance_fraction
    * eps**2, giving N_l proportional to sqrt(V_l * dt_l).  Levels with zero
    variance get zero samples.
    """
    v = np.asarray(variances, dtype=float)
    dt = np.asarray(dts, dtype=float)
    if v.shape != dt.shape or v.ndim != 1:
        raise DriverError("variances and dts must be 1-d and equal length")
    if np.any(v < 0.0) or np.any(dt <= 0.0) or eps <= 0.0:
        raise DriverError("optimal_samples needs V >= 0, dt > 0, eps > 0")
    total = float(np.sum(np.sqrt(v / dt)))
    scale = total / (variance_fraction * eps * eps)
    return np.ceil(np.sqrt(v * dt) * scale).astype(np.int64)


def max_level_for_bias(eps: float, weak_constant: float, horizon: float) -> int:
    """Smallest L with weak_constant * horizon * 2**-L <= eps / sqrt(2)."""
    if eps <= 0.0 or weak_constant <= 0.0 or horizon <= 0.0:
        raise DriverError("max_level_for_bias needs positive arguments")
    level = 0
    budget = eps / math.sqrt(2.0)
    while weak_constant * horizon * 0.5 ** level > budget:
        level += 1
        if level > 62:
            raise DriverError("bias target unreachable")
    return level


def _slope(levels: np.ndarray, logs: np.ndarray):
    """Least-squares slope, intercept and slope standard error."""
    if len(levels) < 3:
        raise DriverError("rate fit needs at least three levels")
    A = np.vstack([np.ones_like(levels), levels]).T
    coef, res, _, _ = np.linalg.lstsq(A, logs, rcond=None)
    dof = len(levels) - 2
    if dof > 0 and res.size:
        sigma2 = float(res[0]) / dof
    else:
        fitted = A @ coef
        sigma2 = float(np.sum((logs - fitted) ** 2)) / max(dof, 1)
    sxx = float(np.sum((levels - levels.mean()) ** 2))
    se = math.sqrt(sigma2 / sxx) if sxx > 0 else float("inf")
    return float(coef[1]), float(coef[0]), se


def fit_rates(stats: Sequence[LevelStats], min_level: int = 1) -> RateFit:
    """Fit alpha, beta, gamma from per-level statistics (levels >= min_level)."""
    usable = [s for s in stats
              if s.level >= min_level and s.n >= 2
              and abs(s.mean_diff) > 0.0 and s.var_diff > 0.0 and s.cost > 0.0]
    lev = np.array([s.level for s in usable], dtype=float)
    if len(lev) < 3:
        raise DriverError("rate fit needs at least three usable levels")
    lm = np.log2(np.abs([s.mean_diff for s in usable]))
    lv = np.log2([s.var_diff for s in usable])
    lc = np.log2([s.cost / s.n for s in usable])
    ms, mi, mse = _slope(lev, lm)
    vs, vi, vse = _slope(lev, lv)
    cs, ci, cse = _slope(lev, lc)
    return RateFit(alpha=-ms, beta=-vs, gamma=cs,
                   alpha_se=mse, beta_se=vse, gamma_se=cse,
                   c1=2.0 ** mi, c2=2.0 ** vi, c3=2.0 ** ci)


def _draw(sampler, level: int, n: int, seed: int, counters: Dict[int, int],
          chunk_size: int, threads: int, stats: LevelStats,
          fine_only: bool = False) -> None:
    """Sample n path pairs in deterministic chunks, reducing in chunk order."""
    if n <= 0:
        return
    sizes = []
    remaining = n
    while remaining > 0:
        take = min(chunk_size, remaining)
        sizes.append(take)
        remaining -= take
    ids = []
    for _ in sizes:
        ids.append(counters.get(level, 0))
        counters[level] = counters.get(level, 0) + 1

    def work(args):
        chunk_id, size = args
        return sampler.sample_pairs(level, size, (seed, level, chunk_id),
                                    fine_only=fine_only)

    jobs = list(zip(ids, sizes))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    for fine, coarse, cost in results:
        stats.add(fine, coarse, cost)


def run_mlmc(sampler, config: MlmcConfig) -> MlmcResult:
    """Adaptive MLMC estimate to root-mean-square accuracy target_rms.

    Starts at min_level, allocates optimal sample counts from estimated
    level variances, and extends the level range until the extrapolated
    weak error fits inside the bias share of the error budget.
    """
    eps = config.target_rms
    if eps >= math.exp(-1.0):
        warnings.warn("target accuracy %g is outside the regime eps < 1/e "
                      "assumed by the complexity analysis" % eps)
    horizon = getattr(sampler, "horizon", 1.0)
    level = config.min_level
    stats: Dict[int, LevelStats] = {}
    counters: Dict[int, int] = {}

    def ensure_initial(l: int) -> None:
        if l not in stats:
            stats[l] = LevelStats(l)
            _draw(sampler, l, config.initial_samples, config.seed, counters,
                  config.chunk_size, config.threads, stats[l])

    for l in range(level + 1):
        ensure_initial(l)

    bias_budget = eps * math.sqrt(1.0 - config.variance_fraction)
    converged = False
    while True:
        levels = list(range(level + 1))
        variances = []
        for l in levels:
            v = stats[l].var_diff
            if not np.isfinite(v):
                # Fall back on the parent level scaled by the fitted decay.
                beta_hat = 2.0
                v = stats[l - 1].var_diff * 0.5 ** beta_hat if l > 0 else 1.0
            variances.append(v)
        dts = [LevelGrid(l, horizon).dt for l in levels]
        targets = optimal_samples(variances, dts, eps, config.variance_fraction)

        topped_up = False
        for l, target in zip(levels, targets):
            extra = int(target) - stats[l].n
            if extra > max(0, int(0.01 * stats[l].n)):
                _draw(sampler, l, extra, config.seed, counters,
                      config.chunk_size, config.threads, stats[l])
                topped_up = True
        if topped_up:
            continue

        # Weak-error stopping rule on the last two level means.
        if config.alpha_hint is not None:
            alpha = config.alpha_hint
        else:
            try:
                alpha = max(fit_rates(list(stats.values())).alpha, 0.5)
            except DriverError:
                alpha = 1.0
        pow_a = 2.0 ** alpha
        m_last = abs(stats[level].mean_diff)
        m_prev = abs(stats[level - 1].mean_diff)
        bias = max(m_last / (pow_a - 1.0), m_prev / (pow_a * (pow_a - 1.0)))
        if bias <= bias_budget:
            converged = True
            break
        if level >= config.max_level:
            warnings.warn("maximum level %d reached before the bias target; "
                          "returning a partially converged estimate"
                          % config.max_level)
            break
        level += 1
        ensure_initial(level)

    ordered = [stats[l] for l in sorted(stats)]
    estimate = float(sum(s.mean_diff for s in ordered))
    std_error = math.sqrt(sum(s.var_diff / s.n for s in ordered if s.n >= 2))
    total_cost = float(sum(s.cost for s in ordered))
    try:
        rates = fit_rates(ordered)
    except DriverError:
        rates = None
    return MlmcResult(estimate=estimate, std_error=std_error, target_rms=eps,
                      levels=ordered, rates=rates, total_cost=total_cost,
                      bias_estimate=bias, converged=converged)


def rate_study(sampler, levels: Sequence[int] = range(2, 8), n: int = 200_000,
               seed: int = 0, chunk_size: int = 1 << 14,
               threads: int = 1) -> List[LevelStats]:
    """Fixed-sample-count study of per-level statistics for rate fitting."""
    out = []
    counters: Dict[int, int] = {}
    for l in levels:
        s = LevelStats(l)
        _draw(sampler, l, n, seed, counters, chunk_size, threads, s)
        out.append(s)
    return out


def run_standard_mc(sampler, eps: float, seed: int = 0,
                    weak_constant: Optional[float] = None,
                    pilot_samples: int = 2000, chunk_size: int = 1 << 14,
                    threads: int = 1, max_level: int = 16) -> StandardMcResult:
    """Single-level reference estimator with dt = O(eps), N = O(eps**-2).

    Without an explicit weak-error constant the bias level is chosen from a
    pilot fit of the level-mean decay; the variance pilot then sizes N so
    the statistical share of the budget is eps**2 / 2.
    """
    horizon = getattr(sampler, "horizon", 1.0)
    counters: Dict[int, int] = {}
    budget = eps / math.sqrt(2.0)
    if weak_constant is not None:
        level = max_level_for_bias(eps, weak_constant, horizon)
    else:
        pilot = []
        for l in range(2, 6):
            s = LevelStats(l)
            _draw(sampler, l, pilot_samples, seed, counters, chunk_size,
                  threads, s)
            pilot.append(s)
        try:
            fit = fit_rates(pilot, min_level=2)
            alpha = max(fit.alpha, 0.5)
            c1 = fit.c1
        except DriverError:
            alpha, c1 = 1.0, max(abs(pilot[-1].mean_diff), eps)
        # Remaining bias beyond level L is ~ c1 * 2**(-alpha L) / (2**alpha - 1).
        level = 2
        while (c1 * 2.0 ** (-alpha * level) / (2.0 ** alpha - 1.0) > budget
               and level < max_level):
            level += 1

    pilot_stats = LevelStats(level)
    _draw(sampler, level, pilot_samples, seed, counters, chunk_size, threads,
          pilot_stats, fine_only=True)
    variance = max(pilot_stats.var_fine, 1e-30)
    n = max(int(math.ceil(2.0 * variance / (eps * eps))), pilot_samples)

    stats = LevelStats(level)
    _draw(sampler, level, n, seed, counters, chunk_size, threads, stats,
          fine_only=True)
    estimate = stats.mean_fine
    std_error = math.sqrt(stats.var_fine / stats.n)
    total_cost = float(stats.n) * LevelGrid(level, horizon).step_count
    return StandardMcResult(estimate=estimate, std_error=std_error,
                            level=level, n=stats.n, total_cost=total_cost)
