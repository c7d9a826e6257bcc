"""Level samplers: the glue between models, schemes, payoffs and the driver.

A sampler exposes sample_pairs(level, n, rng, fine_only=False) returning
per-sample fine and coarse payoff values plus the timestep cost of the
batch.  ``rng`` may be a Generator or a (seed, level, chunk) key triple.
"""
from __future__ import annotations

import numpy as np

from .models import LevelGrid, ModelSpec
from .payoffs import PayoffError, PayoffSpec, payoff_pair
from .randomness import sample_increments
from .schemes import antithetic_triple, coupled_pair


class PathSampler:
    """Coupled path simulation plus payoff evaluation for one option."""

    def __init__(self, model: ModelSpec, spec: PayoffSpec, horizon: float = 1.0):
        self.model = model
        self.spec = spec
        self.horizon = float(horizon)
        if spec.scheme_mode == "milstein_smoothed" and spec.family in (
                "lookback", "digital", "barrier_down_out") and not model.scalar:
            raise PayoffError("smoothed estimators require a scalar model")
        if spec.family == "barrier_down_out" and model.scalar:
            if spec.barrier >= model.initial_state[0]:
                raise PayoffError("down-and-out barrier must start above the "
                                  "barrier level")
        if spec.component >= model.dimension:
            raise PayoffError("payoff component out of range")

    def sample_pairs(self, level: int, n: int, rng, fine_only: bool = False):
        grid = LevelGrid(level, self.horizon)
        inc = sample_increments(rng, grid, self.model, n)
        mode = self.spec.scheme_mode
        if mode == "antithetic":
            paths = antithetic_triple(self.model, grid, inc, fine_only=fine_only)
        else:
            scheme = "euler" if mode == "euler" else "milstein"
            paths = coupled_pair(self.model, grid, inc, scheme=scheme,
                                 fine_only=fine_only)
        pair = payoff_pair(paths, self.spec, inc)
        return pair.fine, pair.coarse, pair.cost_units
