"""Path discretisation schemes: Euler-Maruyama, Milstein, antithetic triples.

The multi-dimensional Milstein scheme omits Levy areas; for models whose
Milstein tensor is symmetric in its last two indices the omitted terms
cancel exactly, and for non-commutative models the antithetic estimator
recovers the lost convergence order in the MLMC variance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import LevelGrid, ModelSpec
from .randomness import IncrementSet, antithetic_swap


class SimulationError(RuntimeError):
    """A path left the representable range (overflow / NaN)."""

    def __init__(self, message: str, step_index: int):
        super().__init__("%s at step %d" % (message, step_index))
        self.step_index = step_index


@dataclass
class PathState:
    """A batch of discrete paths on one grid.

    values has shape (n, steps+1) for scalar models and (n, steps+1, d)
    otherwise.  left_limits, when present, holds pre-jump values.
    """

    times: np.ndarray
    values: np.ndarray
    left_limits: Optional[np.ndarray] = None

    @property
    def sample_count(self) -> int:
        return self.values.shape[0]

    @property
    def step_count(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


@dataclass
class CoupledPaths:
    """Fine path plus its coupled coarse (and optionally antithetic) partner."""

    model: ModelSpec
    fine: PathState
    coarse: Optional[PathState] = None
    antithetic: Optional[PathState] = None


def _increment_array(inc, which: str) -> np.ndarray:
    if isinstance(inc, IncrementSet):
        return inc.fine if which == "fine" else inc.coarse
    return np.asarray(inc)


def _check_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise SimulationError("non-finite path value", step)


def _run_scalar(model: ModelSpec, dt: float, dw: np.ndarray,
                milstein: bool) -> np.ndarray:
    n, steps = dw.shape[0], dw.shape[1]
    f, g, h = model.drift, model.diffusion, model.milstein_tensor
    values = np.empty((n, steps + 1))
    x = np.full(n, model.initial_state[0])
    values[:, 0] = x
    for k in range(steps):
        d = dw[:, k]
        xn = x + f(x) * dt + g(x) * d
        if milstein:
            xn = xn + h(x) * (d * d - dt)
        _check_finite(xn, k + 1)
        values[:, k + 1] = xn
        x = xn
    return values


def _run_general(model: ModelSpec, dt: float, dw: np.ndarray,
                 milstein: bool) -> np.ndarray:
    n, steps = dw.shape[0], dw.shape[1]
    f, g, h = model.drift, model.diffusion, model.milstein_tensor
    values = np.empty((n, steps + 1, model.dimension))
    x = np.tile(model.initial_state, (n, 1))
    values[:, 0, :] = x
    om_dt = model.correlation * dt
    for k in range(steps):
        d = dw[:, k, :]
        xn = x + f(x) * dt + np.einsum("nij,nj->ni", g(x), d)
        if milstein:
            quad = np.einsum("nj,nk->njk", d, d) - om_dt
            xn = xn + np.einsum("nijk,njk->ni", h(x), quad)
        _check_finite(xn, k + 1)
        values[:, k + 1, :] = xn
        x = xn
    return values


def _path(model: ModelSpec, grid: LevelGrid, dw: np.ndarray,
          milstein: bool) -> PathState:
    if model.scalar:
        values = _run_scalar(model, grid.dt, dw[..., 0] if dw.ndim == 3 else dw,
                             milstein)
    else:
        values = _run_general(model, grid.dt, dw, milstein)
    return PathState(times=grid.times(), values=values)


def euler_path(model: ModelSpec, grid: LevelGrid, inc) -> PathState:
    """Euler-Maruyama path batch on the given grid."""
    return _path(model, grid, _increment_array(inc, "fine"), milstein=False)


def milstein_path(model: ModelSpec, grid: LevelGrid, inc) -> PathState:
    """Milstein path batch (Levy areas omitted) on the given grid."""
    return _path(model, grid, _increment_array(inc, "fine"), milstein=True)


def coupled_pair(model: ModelSpec, grid: LevelGrid, inc: IncrementSet,
                 scheme: str = "milstein", fine_only: bool = False) -> CoupledPaths:
    """Fine and coarse paths driven by the same Brownian sample."""
    milstein = scheme == "milstein"
    fine = _path(model, grid, inc.fine, milstein)
    coarse = None
    if inc.coarse is not None and not fine_only:
        coarse = _path(model, grid.coarse(), inc.coarse, milstein)
    return CoupledPaths(model=model, fine=fine, coarse=coarse)


def antithetic_triple(model: ModelSpec, grid: LevelGrid,
                      inc: IncrementSet, fine_only: bool = False) -> CoupledPaths:
    """Fine, antithetic (within-pair swapped) and coarse Milstein paths.

    At level 0 there is no coarse partner and no swap; the fine path alone
    is returned.
    """
    fine = _path(model, grid, inc.fine, milstein=True)
    if inc.coarse is None:
        return CoupledPaths(model=model, fine=fine)
    anti = _path(model, grid, antithetic_swap(inc).fine, milstein=True)
    coarse = None
    if not fine_only:
        coarse = _path(model, grid.coarse(), inc.coarse, milstein=True)
    return CoupledPaths(model=model, fine=fine, coarse=coarse, antithetic=anti)


def is_commutative(model: ModelSpec, probe_points: np.ndarray,
                   tol: float = 1e-10) -> bool:
    """True when the Milstein tensor is symmetric in its driver indices.

    Symmetry at the probe points means the omitted Levy-area contributions
    cancel, so plain Milstein coupling attains its full convergence order.
    Scalar models are trivially commutative.
    """
    if model.scalar:
        return True
    probes = np.atleast_2d(np.asarray(probe_points, dtype=float))
    h = model.milstein_tensor(probes)
    return float(np.max(np.abs(h - h.transpose(0, 1, 3, 2)))) <= tol


def bridge_midpoints(paths: CoupledPaths, inc: IncrementSet) -> np.ndarray:
    """Brownian-bridge interpolants of the coarse path at fine midpoints.

    For each coarse step the interpolant at the midpoint is
    0.5 * (a + b) + g(a) * (dw_half - 0.5 * dw_coarse), where dw_half is the
    first fine increment inside that coarse step.  Scalar models only.
    Returns an array of shape (n, coarse_steps).
    """
    if not paths.model.scalar:
        raise ValueError("bridge interpolation implemented for scalar models")
    if paths.coarse is None:
        raise ValueError("bridge interpolation needs a coarse path")
    vc = paths.coarse.values
    a = vc[:, :-1]
    ga = paths.model.diffusion(a)
    dw_half = inc.fine[:, ::2, 0]
    dw_c = inc.coarse[:, :, 0]
    return 0.5 * (a + vc[:, 1:]) + ga * (dw_half - 0.5 * dw_c)


def brownian_bridge_midpoint(paths: CoupledPaths, inc: IncrementSet,
                             step: int) -> np.ndarray:
    """Midpoint interpolant of coarse step ``step`` for every sample."""
    return bridge_midpoints(paths, inc)[:, step]


def piecewise_linear_interpolant(path: PathState, t: float) -> np.ndarray:
    """Linear interpolation of the path batch at time t."""
    times = path.times
    if not times[0] <= t <= times[-1]:
        raise ValueError("interpolation time outside the grid")
    idx = int(np.searchsorted(times, t, side="right") - 1)
    idx = min(idx, len(times) - 2)
    lam = (t - times[idx]) / (times[idx + 1] - times[idx])
    left = path.values[:, idx]
    right = path.values[:, idx + 1]
    return (1.0 - lam) * left + lam * right
