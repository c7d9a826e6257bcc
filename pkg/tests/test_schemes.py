"""Tests for path discretisation schemes and coupled-path constructions."""
import numpy as np
import pytest

from mlmcfin.models import LevelGrid, ModelSpec, make_model
from mlmcfin.randomness import IncrementSet, sample_increments, stream
from mlmcfin.schemes import (CoupledPaths, PathState, SimulationError,
                             antithetic_triple, bridge_midpoints,
                             brownian_bridge_midpoint, coupled_pair,
                             euler_path, is_commutative, milstein_path,
                             piecewise_linear_interpolant)

GBM = make_model("gbm", alpha=0.05, beta=0.2, x0=1.0)
CC = make_model("clark_cameron")


def scalar_model(f, g, h, x0=1.0, label="custom"):
    return ModelSpec(dimension=1, driver_dimension=1,
                     initial_state=np.array([x0]),
                     drift=f, diffusion=g, milstein_tensor=h,
                     correlation=np.eye(1), label=label)


def increments(fine, dt):
    fine = np.asarray(fine, dtype=float)
    if fine.ndim == 2:
        fine = fine[:, :, None]
    n, nf, m = fine.shape
    coarse = None
    if nf % 2 == 0 and nf >= 2:
        coarse = fine.reshape(n, nf // 2, 2, m).sum(axis=2)
    return IncrementSet(fine=fine, coarse=coarse,
                        uniforms=np.full((n, nf), 0.5), dt=dt)


class TestEulerAndMilstein:
    def test_euler_single_step_no_noise(self):
        # x1 = 1 + 0.05 * 1 + 0.2 * 0 = 1.05
        path = euler_path(GBM, LevelGrid(0), np.zeros((1, 1, 1)))
        assert path.terminal()[0] == pytest.approx(1.05)

    def test_euler_hand_value(self):
        # dt = 0.25, dw = 0.1: x1 = 1 + 0.05*0.25 + 0.2*0.1 = 1.0325
        grid = LevelGrid(2)
        dw = np.array([[[0.1], [0.0], [0.0], [0.0]]])
        path = euler_path(GBM, grid, dw)
        assert path.values[0, 1] == pytest.approx(1.0325)

    def test_milstein_hand_value(self):
        # Adds h * (dw^2 - dt) = 0.02 * (0.01 - 0.25) = -0.0048.
        grid = LevelGrid(2)
        dw = np.array([[[0.1], [0.0], [0.0], [0.0]]])
        path = milstein_path(GBM, grid, dw)
        assert path.values[0, 1] == pytest.approx(1.0325 - 0.0048)

    def test_milstein_reduces_to_euler_when_dw_squared_is_dt(self):
        grid = LevelGrid(3)
        dw = np.full((4, 8, 1), np.sqrt(grid.dt))
        np.testing.assert_allclose(milstein_path(GBM, grid, dw).values,
                                   euler_path(GBM, grid, dw).values)

    def test_additive_noise_schemes_identical(self):
        model = scalar_model(lambda x: -x, lambda x: 0.3 * np.ones_like(x),
                             lambda x: np.zeros_like(x))
        grid = LevelGrid(4)
        inc = sample_increments(stream(0, 4, 0), grid, model, 30)
        np.testing.assert_array_equal(milstein_path(model, grid, inc).values,
                                      euler_path(model, grid, inc).values)

    def test_pure_brownian_path(self):
        # f = 0, g = 1: the path is just the cumulative increments.
        model = scalar_model(lambda x: np.zeros_like(x),
                             lambda x: np.ones_like(x),
                             lambda x: np.zeros_like(x), x0=0.0)
        grid = LevelGrid(1)
        dw = np.array([[[0.1], [0.2]]])
        path = euler_path(model, grid, dw)
        np.testing.assert_allclose(path.values[0], [0.0, 0.1, 0.3])

    def test_nonfinite_path_raises_with_step_index(self):
        model = scalar_model(lambda x: np.full_like(x, np.inf),
                             lambda x: x, lambda x: np.zeros_like(x))
        grid = LevelGrid(2)
        with pytest.raises(SimulationError) as err:
            euler_path(model, grid, np.zeros((1, 4, 1)))
        assert err.value.step_index == 1

    def test_strong_order_against_exact_gbm(self):
        # MSE against the exact lognormal terminal driven by the same
        # Brownian path decays like dt for Euler and dt^2 for Milstein.
        alpha, beta = 0.05, 0.2
        rng = np.random.default_rng(42)
        n = 20_000
        mse = {"euler": [], "milstein": []}
        levels = range(2, 8)
        for level in levels:
            grid = LevelGrid(level)
            dw = rng.standard_normal((n, grid.step_count, 1)) * np.sqrt(grid.dt)
            w_T = dw.sum(axis=(1, 2))
            exact = np.exp((alpha - 0.5 * beta * beta) + beta * w_T)
            for name, fn in (("euler", euler_path), ("milstein", milstein_path)):
                term = fn(GBM, grid, dw).terminal()
                mse[name].append(np.mean((term - exact) ** 2))
        ell = np.asarray(list(levels), dtype=float)
        slope_e = -np.polyfit(ell, np.log2(mse["euler"]), 1)[0]
        slope_m = -np.polyfit(ell, np.log2(mse["milstein"]), 1)[0]
        assert slope_e == pytest.approx(1.0, abs=0.3)
        assert slope_m == pytest.approx(2.0, abs=0.3)


class TestCoupledPair:
    def test_shapes_and_grids(self):
        grid = LevelGrid(3)
        inc = sample_increments(stream(0, 3, 0), grid, GBM, 12)
        pair = coupled_pair(GBM, grid, inc)
        assert pair.fine.step_count == 8
        assert pair.coarse.step_count == 4
        assert pair.fine.values.shape == (12, 9)

    def test_level_zero_and_fine_only(self):
        inc0 = sample_increments(stream(0, 0, 0), LevelGrid(0), GBM, 5)
        assert coupled_pair(GBM, LevelGrid(0), inc0).coarse is None
        grid = LevelGrid(3)
        inc = sample_increments(stream(0, 3, 0), grid, GBM, 5)
        assert coupled_pair(GBM, grid, inc, fine_only=True).coarse is None

    def test_driftless_additive_paths_agree_at_shared_nodes(self):
        # With zero drift and constant diffusion both paths are partial
        # sums of the same increments, so they agree at shared nodes.
        model = scalar_model(lambda x: np.zeros_like(x),
                             lambda x: np.full_like(x, 0.7),
                             lambda x: np.zeros_like(x), x0=2.0)
        grid = LevelGrid(4)
        inc = sample_increments(stream(2, 4, 0), grid, model, 30)
        pair = coupled_pair(model, grid, inc)
        np.testing.assert_allclose(pair.fine.values[:, ::2],
                                   pair.coarse.values, atol=1e-14)


class TestCommutativity:
    def test_scalar_models_commutative(self):
        assert is_commutative(GBM, np.array([1.0]))

    def test_diagonal_model_commutative(self):
        # Each coordinate driven by its own Brownian motion: h is
        # symmetric because only h[i, i, i] entries are non-zero.
        def tensor(x):
            n = x.shape[0]
            h = np.zeros((n, 2, 2, 2))
            h[:, 0, 0, 0] = 0.5 * x[:, 0]
            h[:, 1, 1, 1] = 0.5 * x[:, 1]
            return h

        model = ModelSpec(
            dimension=2, driver_dimension=2, initial_state=np.ones(2),
            drift=lambda x: np.zeros_like(x),
            diffusion=lambda x: np.stack(
                [np.stack([x[:, 0], np.zeros_like(x[:, 0])], axis=1),
                 np.stack([np.zeros_like(x[:, 1]), x[:, 1]], axis=1)], axis=1),
            milstein_tensor=tensor,
            correlation=np.eye(2), label="diag")
        probes = np.array([[1.0, 2.0], [0.5, -0.3]])
        assert is_commutative(model, probes)

    def test_clark_cameron_not_commutative(self):
        probes = np.array([[1.0, 0.0], [2.0, 1.0]])
        assert not is_commutative(CC, probes)


class TestAntitheticTriple:
    def test_mean_of_twins_matches_coarse_at_coarse_nodes(self):
        grid = LevelGrid(4)
        inc = sample_increments(stream(3, 4, 0), grid, CC, 200)
        triple = antithetic_triple(CC, grid, inc)
        avg = 0.5 * (triple.fine.values + triple.antithetic.values)
        np.testing.assert_allclose(avg[:, ::2], triple.coarse.values,
                                   atol=1e-12)

    def test_level_zero_fine_only(self):
        inc = sample_increments(stream(0, 0, 0), LevelGrid(0), CC, 5)
        triple = antithetic_triple(CC, LevelGrid(0), inc)
        assert triple.coarse is None
        assert triple.antithetic is None

    def test_zero_diffusion_twins_equal(self):
        model = scalar_model(lambda x: 0.1 * x,
                             lambda x: np.zeros_like(x),
                             lambda x: np.zeros_like(x))
        grid = LevelGrid(3)
        inc = sample_increments(stream(1, 3, 0), grid, model, 10)
        triple = antithetic_triple(model, grid, inc)
        np.testing.assert_array_equal(triple.fine.values,
                                      triple.antithetic.values)

    def test_twins_share_the_path_law(self):
        grid = LevelGrid(4)
        inc = sample_increments(stream(5, 4, 0), grid, CC, 100_000)
        triple = antithetic_triple(CC, grid, inc)
        tf = triple.fine.terminal()
        ta = triple.antithetic.terminal()
        se = np.sqrt((tf.var(axis=0) + ta.var(axis=0)) / tf.shape[0])
        assert np.all(np.abs(tf.mean(axis=0) - ta.mean(axis=0)) < 3 * se)

    def test_smooth_payoff_variance_decay(self):
        # For a smooth payoff of a non-commutative model, averaging the
        # twins restores second-order variance decay of the correction.
        def payoff(x):
            return x[:, 1] ** 2

        variances = []
        levels = range(2, 7)
        for level in levels:
            grid = LevelGrid(level)
            inc = sample_increments(stream(9, level, 0), grid, CC, 40_000)
            triple = antithetic_triple(CC, grid, inc)
            corr = 0.5 * (payoff(triple.fine.terminal())
                          + payoff(triple.antithetic.terminal())) \
                - payoff(triple.coarse.terminal())
            variances.append(corr.var())
        slope = -np.polyfit(list(levels), np.log2(variances), 1)[0]
        assert slope > 1.7


class TestExactLevyAreaStepper:
    """A reference stepper that adds the omitted Levy-area correction.

    With brute-force iterated integrals from sub-sampled increments, the
    corrected Milstein step reproduces the sub-sampled Euler solution of
    the Clark-Cameron system exactly, confirming both the tensor
    convention and the sign of the omitted term.
    """

    @staticmethod
    def _areas(sub):
        # sub: (n, substeps, m) increments; I[j, k] = sum_s W_j(s-) dW_k(s).
        n, s, m = sub.shape
        w_before = np.concatenate(
            [np.zeros((n, 1, m)), np.cumsum(sub, axis=1)[:, :-1, :]], axis=1)
        iterated = np.einsum("nsj,nsk->njk", w_before, sub)
        return iterated - iterated.transpose(0, 2, 1)

    def test_matches_subsampled_euler(self):
        rng = np.random.default_rng(17)
        n, substeps = 50, 64
        grid = LevelGrid(2)
        dt = grid.dt
        sub = rng.standard_normal((n, grid.step_count, substeps, 2)) \
            * np.sqrt(dt / substeps)

        # Reference: Euler on the fully refined grid (exact for this model).
        fine_dw = sub.reshape(n, grid.step_count * substeps, 2)
        refined = LevelGrid(2 + 6)  # 4 * 64 = 256 steps
        reference = euler_path(CC, refined, fine_dw).terminal()

        # Corrected Milstein on the 4-step grid.  The discrete iterated
        # integrals satisfy I_jk + I_kj = dW_j dW_k - [W_j, W_k], with the
        # bracket being the discrete quadratic covariation of the
        # sub-increments, so the quadratic term uses that bracket.
        x = np.tile(CC.initial_state, (n, 1))
        for k in range(grid.step_count):
            dw = sub[:, k].sum(axis=1)
            area = self._areas(sub[:, k])
            g = CC.diffusion(x)
            h = CC.milstein_tensor(x)
            bracket = np.einsum("nsj,nsk->njk", sub[:, k], sub[:, k])
            quad = np.einsum("nj,nk->njk", dw, dw) - bracket
            x = (x + CC.drift(x) * dt
                 + np.einsum("nij,nj->ni", g, dw)
                 + np.einsum("nijk,njk->ni", h, quad)
                 + np.einsum("nijk,njk->ni", h, area))
        np.testing.assert_allclose(x, reference, atol=1e-12)


class TestBridgeInterpolation:
    def _flat_pair(self):
        model = scalar_model(lambda x: np.zeros_like(x),
                             lambda x: np.full_like(x, 0.5),
                             lambda x: np.zeros_like(x))
        coarse = PathState(times=np.array([0.0, 1.0]),
                           values=np.array([[1.0, 1.2]]))
        fine = PathState(times=np.array([0.0, 0.5, 1.0]),
                         values=np.array([[1.0, 1.1, 1.2]]))
        inc = increments(np.array([[0.3, 0.1]]), 0.5)
        return CoupledPaths(model=model, fine=fine, coarse=coarse), inc

    def test_midpoint_hand_value(self):
        # 0.5*(1 + 1.2) + 0.5*(0.3 - 0.5*0.4) = 1.15
        pair, inc = self._flat_pair()
        mid = bridge_midpoints(pair, inc)
        assert mid.shape == (1, 1)
        assert mid[0, 0] == pytest.approx(1.15)
        assert brownian_bridge_midpoint(pair, inc, 0)[0] == pytest.approx(1.15)

    def test_symmetric_increments_give_average(self):
        pair, _ = self._flat_pair()
        inc = increments(np.array([[0.2, 0.2]]), 0.5)
        assert bridge_midpoints(pair, inc)[0, 0] == pytest.approx(1.1)

    def test_zero_diffusion_gives_linear_interpolant(self):
        pair, inc = self._flat_pair()
        model = scalar_model(lambda x: np.zeros_like(x),
                             lambda x: np.zeros_like(x),
                             lambda x: np.zeros_like(x))
        pair = CoupledPaths(model=model, fine=pair.fine, coarse=pair.coarse)
        assert bridge_midpoints(pair, inc)[0, 0] == pytest.approx(1.1)

    def test_requires_scalar_model_and_coarse_path(self):
        grid = LevelGrid(2)
        inc = sample_increments(stream(0, 2, 0), grid, CC, 3)
        pair = coupled_pair(CC, grid, inc)
        with pytest.raises(ValueError):
            bridge_midpoints(pair, inc)
        inc_g = sample_increments(stream(0, 2, 0), grid, GBM, 3)
        pair_g = coupled_pair(GBM, grid, inc_g, fine_only=True)
        with pytest.raises(ValueError):
            bridge_midpoints(pair_g, inc_g)


class TestPiecewiseLinear:
    def _path(self):
        return PathState(times=np.array([0.0, 1.0]),
                         values=np.array([[2.0, 4.0]]))

    def test_interior_value(self):
        assert piecewise_linear_interpolant(self._path(), 0.2)[0] \
            == pytest.approx(2.4)

    def test_node_values(self):
        path = self._path()
        assert piecewise_linear_interpolant(path, 0.0)[0] == 2.0
        assert piecewise_linear_interpolant(path, 1.0)[0] == 4.0

    def test_out_of_range_raises(self):
        with pytest.raises(ValueError):
            piecewise_linear_interpolant(self._path(), 1.5)
        with pytest.raises(ValueError):
            piecewise_linear_interpolant(self._path(), -0.1)
