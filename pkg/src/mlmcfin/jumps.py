"""Jump-diffusion simulation on jump-adapted grids.

Between jumps the scalar Milstein scheme advances the diffusion on the
union of the uniform grid and the jump times; at a jump the state moves by
c(X-) * (Y - 1).  Fine and coarse legs share jump times and Brownian
increments, so coarse node times are always a subset of fine node times.

State-dependent intensities are handled by thinning from a constant bound;
with the measure change every candidate is accepted with probability 1/2
under the sampling measure and each leg carries a likelihood-ratio weight,
which keeps the two legs jumping at identical times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import ndtr

from .models import LevelGrid, ModelSpec
from .payoffs import PayoffError, PayoffPair, PayoffSpec
from .randomness import stream


class JumpError(ValueError):
    """Invalid jump specification or intensity bound violation."""


@dataclass(frozen=True)
class JumpSpec:
    """Jump component: intensity, multiplicative lognormal marks, and the
    jump coefficient c(x) (default c(x) = x, i.e. X -> X * Y)."""

    intensity: Union[float, Callable[[np.ndarray], np.ndarray]]
    mark_mu: float = 0.0
    mark_sigma: float = 0.0
    intensity_bound: Optional[float] = None
    jump_coefficient: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if callable(self.intensity):
            if self.intensity_bound is None or self.intensity_bound <= 0.0:
                raise JumpError("state-dependent intensity needs a positive "
                                "intensity_bound")
        else:
            if self.intensity < 0.0:
                raise JumpError("intensity must be non-negative")
        if self.mark_sigma < 0.0:
            raise JumpError("mark_sigma must be non-negative")

    @property
    def constant_rate(self) -> bool:
        return not callable(self.intensity)

    @property
    def bound_intensity(self) -> float:
        if self.constant_rate:
            return float(self.intensity)
        return float(self.intensity_bound)

    def coefficient(self, x: np.ndarray) -> np.ndarray:
        if self.jump_coefficient is None:
            return x
        return self.jump_coefficient(x)


def sample_jump_times(rng, lam: float, horizon: float, n: int):
    """Poisson arrival times in (0, horizon] via exponential inter-arrivals.

    Returns (times, counts) where times has shape (n, kmax) padded with inf
    beyond each sample's count.
    """
    if lam < 0.0:
        raise JumpError("intensity must be non-negative")
    if lam == 0.0:
        return np.full((n, 0), np.inf), np.zeros(n, dtype=np.int64)
    lt = lam * horizon
    cap = int(lt + 10.0 * math.sqrt(lt) + 20.0)
    t = np.cumsum(rng.exponential(scale=1.0 / lam, size=(n, cap)), axis=1)
    while np.any(t[:, -1] <= horizon):
        extra = np.cumsum(rng.exponential(scale=1.0 / lam, size=(n, cap)), axis=1)
        t = np.concatenate([t, t[:, -1:] + extra], axis=1)
    inside = t <= horizon
    counts = inside.sum(axis=1).astype(np.int64)
    kmax = int(counts.max())
    times = np.where(inside, t, np.inf)[:, :kmax]
    return times, counts


def sample_marks(rng, jspec: JumpSpec, shape) -> np.ndarray:
    """Multiplicative lognormal jump marks Y."""
    return np.exp(jspec.mark_mu + jspec.mark_sigma * rng.standard_normal(shape))


def jump_adapted_grid(grid: LevelGrid, jump_times: np.ndarray) -> np.ndarray:
    """Union of the uniform grid and the jump times inside (0, horizon]."""
    jt = np.asarray(jump_times, dtype=float).ravel()
    jt = jt[np.isfinite(jt) & (jt > 0.0) & (jt <= grid.horizon)]
    return np.union1d(grid.times(), jt)


@dataclass
class JumpPaths:
    """Batched coupled paths on per-sample jump-adapted grids.

    All column-indexed arrays are aligned: column j of every array refers to
    the same per-sample grid node.  Coarse quantities are meaningful only at
    columns flagged as coarse nodes.
    """

    model: ModelSpec
    grid: LevelGrid
    times: np.ndarray          # (n, M) node times (padded nodes repeat T)
    dts: np.ndarray            # (n, M-1)
    fine: np.ndarray           # (n, M) fine values (post-jump)
    fine_left: np.ndarray      # (n, M) fine left limits (pre-jump)
    brownian: np.ndarray       # (n, M) cumulative Brownian path
    uniforms: np.ndarray       # (n, M-1) one U(0,1] per segment
    weight_fine: np.ndarray    # (n,) likelihood-ratio weight
    fine_integral: np.ndarray  # (n,) trapezoid integral of the fine leg
    has_coarse: bool = False
    cnode: Optional[np.ndarray] = None        # (n, M) coarse-adapted node flags
    coarse_pre: Optional[np.ndarray] = None   # (n, M) left limits at cnodes
    coarse_post: Optional[np.ndarray] = None  # (n, M) values at cnodes
    weight_coarse: Optional[np.ndarray] = None
    coarse_integral: Optional[np.ndarray] = None
    coarse_terminal: Optional[np.ndarray] = None
    fine_cost: float = 0.0
    coarse_cost: float = 0.0


def _prev_next_indices(flags: np.ndarray):
    """Per column: index of the last/next flagged column (inclusive)."""
    n, m = flags.shape
    cols = np.broadcast_to(np.arange(m), (n, m))
    prev = np.maximum.accumulate(np.where(flags, cols, -1), axis=1)
    rev = flags[:, ::-1]
    nxt_rev = np.maximum.accumulate(np.where(rev, cols, -1), axis=1)
    nxt = (m - 1) - nxt_rev[:, ::-1]
    nxt = np.where(nxt_rev[:, ::-1] < 0, m, nxt)
    return prev, nxt


def jump_adapted_milstein_pair(model: ModelSpec, jspec: JumpSpec,
                               grid: LevelGrid, rng, n: int,
                               thinning: Optional[str] = None,
                               fine_only: bool = False) -> JumpPaths:
    """Simulate a coupled fine/coarse scalar Milstein pair with jumps.

    ``thinning`` is None for a constant rate (every candidate jumps),
    "physical" for per-leg acceptance U < lambda(X-)/lambda_bar, or
    "measure_change" for shared acceptance U < 1/2 with per-leg
    likelihood-ratio weights.
    """
    if not model.scalar:
        raise JumpError("jump-adapted simulation implemented for scalar models")
    if not isinstance(rng, np.random.Generator):
        rng = stream(*rng)
    T = grid.horizon
    nf = grid.step_count

    lam_bar = jspec.bound_intensity
    cand, counts = sample_jump_times(rng, lam_bar, T, n)
    k = cand.shape[1]
    marks = sample_marks(rng, jspec, (n, k)) if k else np.zeros((n, 0))
    cand_u = rng.random((n, k)) if (thinning is not None and k) else None

    # Master grid: uniform fine nodes plus candidate times (pads repeat T).
    base = np.broadcast_to(grid.times(), (n, nf + 1))
    real = np.isfinite(cand)
    jt = np.where(real, cand, T)
    times = np.concatenate([base, jt], axis=1)
    is_jump = np.concatenate([np.zeros((n, nf + 1), bool), real], axis=1)
    base_idx = np.broadcast_to(np.arange(nf + 1), (n, nf + 1))
    if grid.level >= 1:
        unif_cnode = base_idx % 2 == 0
    else:
        unif_cnode = np.ones((n, nf + 1), bool)
    cnode = np.concatenate([unif_cnode, real], axis=1)
    cidx = np.concatenate([np.full((n, nf + 1), -1),
                           np.broadcast_to(np.arange(k), (n, k))], axis=1)

    order = np.argsort(times, axis=1, kind="stable")
    times = np.take_along_axis(times, order, axis=1)
    is_jump = np.take_along_axis(is_jump, order, axis=1)
    cnode = np.take_along_axis(cnode, order, axis=1)
    cidx = np.take_along_axis(cidx, order, axis=1)

    m_cols = times.shape[1]
    dts = np.diff(times, axis=1)
    dw = rng.standard_normal((n, m_cols - 1)) * np.sqrt(dts)
    uniforms = 1.0 - rng.random((n, m_cols - 1))
    brownian = np.concatenate([np.zeros((n, 1)), np.cumsum(dw, axis=1)], axis=1)

    f, g, h = model.drift, model.diffusion, model.milstein_tensor
    rows = np.arange(n)

    def intensity_ratio(x):
        if jspec.constant_rate:
            return np.ones_like(x)
        p = jspec.intensity(x) / lam_bar
        if np.any(p > 1.0 + 1e-12):
            raise JumpError("intensity exceeds its stated bound")
        return np.minimum(p, 1.0)

    def jump_update(pre, col, weight, accept_mode):
        """Apply the jump at one column; returns (post, weight)."""
        flag = is_jump[:, col]
        if not np.any(flag):
            return pre, weight
        idx = np.clip(cidx[:, col], 0, max(k - 1, 0))
        y = marks[rows, idx]
        if thinning is None:
            accept = flag
        else:
            u = cand_u[rows, idx]
            p = intensity_ratio(pre)
            if thinning == "physical":
                accept = flag & (u < p)
            else:  # measure_change
                accept = flag & (u < 0.5)
                ratio = np.where(u < 0.5, 2.0 * p, 2.0 * (1.0 - p))
                weight = weight * np.where(flag, ratio, 1.0)
        post = np.where(accept, pre + jspec.coefficient(pre) * (y - 1.0), pre)
        return post, weight

    # Fine leg.
    fine = np.empty((n, m_cols))
    fine_left = np.empty((n, m_cols))
    xf = np.full(n, model.initial_state[0])
    fine[:, 0] = fine_left[:, 0] = xf
    wf = np.ones(n)
    f_int = np.zeros(n)
    for j in range(1, m_cols):
        d = dts[:, j - 1]
        w = dw[:, j - 1]
        pre = xf + f(xf) * d + g(xf) * w + h(xf) * (w * w - d)
        fine_left[:, j] = pre
        f_int += 0.5 * (xf + pre) * d
        xf, wf = jump_update(pre, j, wf, thinning)
        fine[:, j] = xf
    fine_cost = float(np.count_nonzero(dts))

    paths = JumpPaths(model=model, grid=grid, times=times, dts=dts, fine=fine,
                      fine_left=fine_left, brownian=brownian, uniforms=uniforms,
                      weight_fine=wf, fine_integral=f_int, fine_cost=fine_cost)
    if grid.level == 0 or fine_only:
        return paths

    # Coarse leg: frozen coefficients between coarse-adapted nodes.
    coarse_pre = np.full((n, m_cols), np.nan)
    coarse_post = np.full((n, m_cols), np.nan)
    xc = np.full(n, model.initial_state[0])
    coarse_pre[:, 0] = coarse_post[:, 0] = xc
    fc, gc, hc = f(xc), g(xc), h(xc)
    accw = np.zeros(n)
    accdt = np.zeros(n)
    wc = np.ones(n)
    c_int = np.zeros(n)
    c_steps = 0.0
    for j in range(1, m_cols):
        accw = accw + dw[:, j - 1]
        accdt = accdt + dts[:, j - 1]
        take = cnode[:, j]
        if np.any(take):
            pre = xc + fc * accdt + gc * accw + hc * (accw * accw - accdt)
            post, wc_new = jump_update(pre, j, wc, thinning)
            wc = np.where(take, wc_new, wc)
            c_int += np.where(take, 0.5 * (xc + pre) * accdt, 0.0)
            coarse_pre[:, j] = np.where(take, pre, np.nan)
            coarse_post[:, j] = np.where(take, post, np.nan)
            xc = np.where(take, post, xc)
            fc = np.where(take, f(xc), fc)
            gc = np.where(take, g(xc), gc)
            hc = np.where(take, h(xc), hc)
            accw = np.where(take, 0.0, accw)
            accdt = np.where(take, 0.0, accdt)
            c_steps += float(np.count_nonzero(take & (dts[:, j - 1:j].ravel() >= 0)))
    paths.has_coarse = True
    paths.cnode = cnode
    paths.coarse_pre = coarse_pre
    paths.coarse_post = coarse_post
    paths.weight_coarse = wc
    paths.coarse_integral = c_int
    paths.coarse_terminal = xc
    paths.coarse_cost = c_steps
    return paths


def _coarse_interpolants(paths: JumpPaths):
    """Coarse-leg values at every master column.

    Coarse node columns report (pre, post); other columns get the Brownian
    bridge interpolant between the surrounding coarse nodes with the
    diffusion frozen at the left node.
    """
    n, m = paths.times.shape
    prev, nxt = _prev_next_indices(paths.cnode)
    rows = np.arange(n)[:, None]
    nxt_c = np.minimum(nxt, m - 1)
    a = np.take_along_axis(paths.coarse_post, prev, axis=1)
    b = np.take_along_axis(paths.coarse_pre, nxt_c, axis=1)
    ta = np.take_along_axis(paths.times, prev, axis=1)
    tb = np.take_along_axis(paths.times, nxt_c, axis=1)
    wa = np.take_along_axis(paths.brownian, prev, axis=1)
    wb = np.take_along_axis(paths.brownian, nxt_c, axis=1)
    span = tb - ta
    lam = np.where(span > 0.0, (paths.times - ta) / np.where(span > 0.0, span, 1.0),
                   0.0)
    ga = paths.model.diffusion(a)
    interp = a + lam * (b - a) + ga * ((paths.brownian - wa) - lam * (wb - wa))
    no_next = nxt >= m
    interp = np.where(no_next, a, interp)
    start = np.where(paths.cnode, paths.coarse_post, interp)
    end = np.where(paths.cnode, paths.coarse_pre, interp)
    # Diffusion frozen at the last coarse node of each segment's start.
    g_seg = np.take_along_axis(ga, prev[:, :-1], axis=1)
    return start, end, g_seg


def _bridge_min(a, b, g_left, dts, uniforms):
    spread = (b - a) ** 2 - 2.0 * g_left ** 2 * dts * np.log(uniforms)
    return 0.5 * (a + b - np.sqrt(np.maximum(spread, 0.0)))


def _survival(a, b, barrier, g_left, dts):
    num = np.maximum(a - barrier, 0.0) * np.maximum(b - barrier, 0.0)
    den = g_left ** 2 * dts
    safe = den > 0.0
    p = np.where(safe, np.exp(-2.0 * num / np.where(safe, den, 1.0)),
                 np.where(num > 0.0, 0.0, 1.0))
    return 1.0 - p


def jump_payoff_pair(paths: JumpPaths, spec: PayoffSpec) -> PayoffPair:
    """Payoff pair on jump-adapted paths, including smoothed families.

    Likelihood-ratio weights from thinning multiply each leg.  Supported
    families: lipschitz_european, asian, lookback, digital (smoothed) and
    barrier_down_out (smoothed).
    """
    model = paths.model
    T = paths.grid.horizon
    disc = float(np.exp(-spec.discount_rate * T))
    family = spec.family
    f, g = model.drift, model.diffusion

    def smoothed_inputs():
        af = paths.fine[:, :-1]
        bf = paths.fine_left[:, 1:]
        gf = g(af)
        if paths.has_coarse:
            start, end, g_seg = _coarse_interpolants(paths)
            return af, bf, gf, start[:, :-1], end[:, 1:], g_seg
        return af, bf, gf, None, None, None

    if family == "lipschitz_european":
        pf = spec.terminal(paths.fine[:, -1])
        pc = (spec.terminal(paths.coarse_terminal)
              if paths.has_coarse else np.zeros_like(pf))
    elif family == "asian":
        pf = np.maximum(paths.fine_integral / T - spec.strike, 0.0)
        pc = (np.maximum(paths.coarse_integral / T - spec.strike, 0.0)
              if paths.has_coarse else np.zeros_like(pf))
    elif family == "lookback":
        af, bf, gf, ac, bc, gcs = smoothed_inputs()
        mf = _bridge_min(af, bf, gf, paths.dts, paths.uniforms)
        pf = paths.fine[:, -1] - mf.min(axis=1)
        if paths.has_coarse:
            mc = _bridge_min(ac, bc, gcs, paths.dts, paths.uniforms)
            pc = paths.coarse_terminal - mc.min(axis=1)
        else:
            pc = np.zeros_like(pf)
    elif family == "barrier_down_out":
        af, bf, gf, ac, bc, gcs = smoothed_inputs()
        surv_f = _survival(af, bf, spec.barrier, gf, paths.dts)
        pf = spec.terminal(paths.fine[:, -1]) * np.prod(surv_f, axis=1)
        if paths.has_coarse:
            surv_c = _survival(ac, bc, spec.barrier, gcs, paths.dts)
            pc = (spec.terminal(paths.coarse_terminal)
                  * np.prod(surv_c, axis=1))
        else:
            pc = np.zeros_like(pf)
    elif family == "digital":
        n, m = paths.times.shape
        rows = np.arange(n)
        last = (paths.times < T).sum(axis=1) - 1
        y = paths.fine[rows, last]
        dt_seg = T - paths.times[rows, last]
        sd = np.abs(g(y)) * np.sqrt(dt_seg)
        centre = y + f(y) * dt_seg - spec.strike
        pf = np.where(sd > 0.0, ndtr(centre / np.where(sd > 0.0, sd, 1.0)),
                      (centre > 0.0).astype(float))
        if paths.has_coarse:
            prev, _ = _prev_next_indices(paths.cnode)
            pcol = prev[rows, last]
            yc = paths.coarse_post[rows, pcol]
            dt_c = T - paths.times[rows, pcol]
            dw_shared = paths.brownian[rows, last] - paths.brownian[rows, pcol]
            centre_c = yc + f(yc) * dt_c + g(yc) * dw_shared - spec.strike
            sdc = np.abs(g(yc)) * np.sqrt(dt_seg)
            pc = np.where(sdc > 0.0,
                          ndtr(centre_c / np.where(sdc > 0.0, sdc, 1.0)),
                          (centre_c > 0.0).astype(float))
        else:
            pc = np.zeros_like(pf)
    else:
        raise PayoffError("no jump-adapted estimator for family %r" % family)

    pf = disc * pf * paths.weight_fine
    if paths.has_coarse:
        pc = disc * pc * paths.weight_coarse
    cost = paths.fine_cost + paths.coarse_cost
    return PayoffPair(pf, pc, cost_units=cost)


class JumpPathSampler:
    """Level sampler for jump-diffusion payoffs (constant-rate jumps)."""

    def __init__(self, model: ModelSpec, spec: PayoffSpec, horizon: float = 1.0,
                 jump_spec: Optional[JumpSpec] = None):
        self.model = model
        self.spec = spec
        self.horizon = float(horizon)
        self.jspec = jump_spec if jump_spec is not None else model.jumps
        if self.jspec is None:
            raise JumpError("model has no jump specification")
        self.thinning = None

    def sample_pairs(self, level, n, rng, fine_only: bool = False):
        grid = LevelGrid(level, self.horizon)
        paths = jump_adapted_milstein_pair(self.model, self.jspec, grid, rng, n,
                                           thinning=self.thinning,
                                           fine_only=fine_only)
        pair = jump_payoff_pair(paths, self.spec)
        return pair.fine, pair.coarse, pair.cost_units


class ThinnedJumpSampler(JumpPathSampler):
    """Sampler for state-dependent intensities via thinning.

    With ``measure_change`` both legs accept each candidate with probability
    1/2 under the sampling measure and carry likelihood-ratio weights;
    without it each leg accepts candidates under its own intensity, which
    degrades the MLMC variance decay by roughly one order.
    """

    def __init__(self, model, spec, horizon: float = 1.0, jump_spec=None,
                 measure_change: bool = True):
        super().__init__(model, spec, horizon=horizon, jump_spec=jump_spec)
        self.thinning = "measure_change" if measure_change else "physical"
