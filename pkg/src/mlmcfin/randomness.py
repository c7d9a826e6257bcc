"""Counter-based random streams and coupled Brownian increment generation.

Streams are keyed by (seed, level, chunk) on a Philox counter-based
generator, so any chunk of samples can be regenerated independently of
scheduling order or worker count.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .models import LevelGrid, ModelSpec

_CHUNK_LIMIT = 1 << 32


def stream(seed: int, level: int, chunk: int) -> np.random.Generator:
    """Independent generator for one (seed, level, chunk) triple."""
    if not 0 <= chunk < _CHUNK_LIMIT:
        raise ValueError("chunk index out of range")
    if level < 0:
        raise ValueError("level must be non-negative")
    key = np.array([np.uint64(int(seed) & (2**64 - 1)),
                    np.uint64((level << 32) | chunk)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class IncrementSet:
    """Coupled Brownian increments for a batch of sample paths.

    fine:     (n, nf, m) correlated increments on the fine grid
    coarse:   (n, nf/2, m) pairwise sums, or None at level 0
    uniforms: (n, nf) U(0, 1] draws, one per fine step, pre-drawn whether or
              not the payoff uses them (keeps streams aligned across payoffs)
    """

    fine: np.ndarray
    coarse: Optional[np.ndarray]
    uniforms: np.ndarray
    dt: float
    jump_times: Optional[np.ndarray] = None
    jump_counts: Optional[np.ndarray] = None
    jump_marks: Optional[np.ndarray] = None
    seed_path: Optional[Tuple[int, int, int]] = None

    @property
    def sample_count(self) -> int:
        return self.fine.shape[0]

    @property
    def fine_step_count(self) -> int:
        return self.fine.shape[1]


def sample_increments(rng, grid: LevelGrid, model: ModelSpec, n: int,
                      jump_spec=None) -> IncrementSet:
    """Draw a batch of coupled fine/coarse increments for one level.

    ``rng`` is either a Generator or a (seed, level, chunk) key triple.
    Coarse increments exist only for level >= 1 and are the exact pairwise
    sums of consecutive fine increments.
    """
    seed_path = None
    if not isinstance(rng, np.random.Generator):
        seed_path = tuple(int(v) for v in rng)
        rng = stream(*seed_path)
    nf = grid.step_count
    m = model.driver_dimension
    dt = grid.dt

    z = rng.standard_normal((n, nf, m))
    if m == 1:
        fine = z * np.sqrt(dt)
    else:
        fine = np.einsum("ik,nfk->nfi", model.driver_factor(), z) * np.sqrt(dt)
    # 1 - U(0,1) lies in (0, 1]; log of it is finite.
    uniforms = 1.0 - rng.random((n, nf))
    coarse = None
    if grid.level >= 1:
        coarse = fine.reshape(n, nf // 2, 2, m).sum(axis=2)

    jump_times = jump_counts = jump_marks = None
    if jump_spec is not None:
        from .jumps import sample_jump_times, sample_marks
        jump_times, jump_counts = sample_jump_times(
            rng, jump_spec.bound_intensity, grid.horizon, n)
        jump_marks = sample_marks(rng, jump_spec, jump_times.shape)

    return IncrementSet(fine=fine, coarse=coarse, uniforms=uniforms, dt=dt,
                        jump_times=jump_times, jump_counts=jump_counts,
                        jump_marks=jump_marks, seed_path=seed_path)


def antithetic_swap(inc: IncrementSet) -> IncrementSet:
    """Swap the two fine increments within each coarse step.

    The swap is an involution and leaves the coarse increments unchanged.
    """
    nf = inc.fine_step_count
    if nf % 2 != 0:
        raise ValueError("antithetic swap needs an even number of fine steps")
    n, _, m = inc.fine.shape
    swapped = inc.fine.reshape(n, nf // 2, 2, m)[:, :, ::-1, :].reshape(n, nf, m)
    return IncrementSet(fine=swapped, coarse=inc.coarse, uniforms=inc.uniforms,
                        dt=inc.dt, jump_times=inc.jump_times,
                        jump_counts=inc.jump_counts, jump_marks=inc.jump_marks,
                        seed_path=inc.seed_path)
