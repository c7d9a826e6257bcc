"""Tests for model definitions and level-grid geometry."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlmcfin.models import LevelGrid, ModelError, ModelSpec, make_model


class TestLevelGrid:
    @given(level=st.integers(min_value=0, max_value=30),
           horizon=st.floats(min_value=1e-3, max_value=1e3,
                             allow_nan=False, allow_infinity=False))
    @settings(max_examples=200)
    def test_dt_times_count_is_horizon_exact(self, level, horizon):
        grid = LevelGrid(level, horizon)
        assert grid.dt * grid.step_count == horizon

    def test_step_count_and_dt(self):
        grid = LevelGrid(3)
        assert grid.step_count == 8
        assert grid.dt == 0.125

    def test_times_endpoints(self):
        grid = LevelGrid(4, horizon=2.5)
        t = grid.times()
        assert t[0] == 0.0
        assert t[-1] == 2.5
        assert len(t) == 17
        assert np.all(np.diff(t) > 0.0)

    def test_coarse_nesting(self):
        fine = LevelGrid(5, horizon=1.0)
        coarse = fine.coarse()
        assert coarse.level == 4
        assert coarse.dt == 2.0 * fine.dt
        # Coarse step boundaries are a subset of the fine boundaries.
        assert set(coarse.times()).issubset(set(fine.times()))

    def test_level_zero_has_no_coarse(self):
        with pytest.raises(ValueError):
            LevelGrid(0).coarse()

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            LevelGrid(-1)
        with pytest.raises(ValueError):
            LevelGrid(2, horizon=0.0)


class TestGbm:
    def test_coefficients_at_unit_state(self):
        model = make_model("gbm", alpha=0.05, beta=0.2, x0=1.0)
        x = np.array([1.0])
        assert model.drift(x)[0] == pytest.approx(0.05)
        assert model.diffusion(x)[0] == pytest.approx(0.2)
        assert model.milstein_tensor(x)[0] == pytest.approx(0.02)

    def test_tensor_is_half_gprime_g(self):
        # h = 0.5 * g'(x) * g(x), with g' from a central finite difference.
        model = make_model("gbm", alpha=0.1, beta=0.3, x0=1.0)
        x = np.linspace(0.5, 2.0, 7)
        eps = 1e-6
        gprime = (model.diffusion(x + eps) - model.diffusion(x - eps)) / (2 * eps)
        expected = 0.5 * gprime * model.diffusion(x)
        np.testing.assert_allclose(model.milstein_tensor(x), expected, rtol=1e-6)

    def test_parameter_validation(self):
        with pytest.raises(ModelError):
            make_model("gbm", alpha=0.05, beta=0.0)
        with pytest.raises(ModelError):
            make_model("gbm", alpha=0.05, beta=0.2, x0=-1.0)
        with pytest.raises(ModelError):
            make_model("gbm", alpha=0.05)

    def test_scalar_flag(self):
        model = make_model("gbm", alpha=0.05, beta=0.2)
        assert model.scalar
        assert model.dimension == 1
        assert model.driver_dimension == 1


class TestClarkCameron:
    def test_diffusion_matrix(self):
        model = make_model("clark_cameron")
        g = model.diffusion(np.array([[3.0, 7.0]]))
        np.testing.assert_allclose(g[0], [[1.0, 0.0], [0.0, 3.0]])

    def test_tensor_entry(self):
        model = make_model("clark_cameron")
        h = model.milstein_tensor(np.array([[3.0, 7.0]]))
        assert h[0, 1, 0, 1] == 0.5
        other = h.copy()
        other[0, 1, 0, 1] = 0.0
        assert np.all(other == 0.0)

    def test_default_initial_state(self):
        model = make_model("clark_cameron")
        np.testing.assert_allclose(model.initial_state, [0.0, 0.0])
        assert not model.scalar

    def test_x0_length_check(self):
        with pytest.raises(ModelError):
            make_model("clark_cameron", x0=(1.0, 2.0, 3.0))


class TestHeston:
    def _model(self, v0=0.04, rho=-0.5):
        return make_model("heston", r=0.05, kappa=2.0, theta=0.04,
                          sigma=0.3, rho=rho, s0=1.0, v0=v0)

    def test_zero_variance_kills_diffusion(self):
        model = self._model(v0=0.0)
        g = model.diffusion(np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(g[0], 0.0)
        # Drift still pushes the variance up towards theta.
        f = model.drift(np.array([[1.0, 0.0]]))
        assert f[0, 1] == pytest.approx(2.0 * 0.04)

    def test_negative_variance_is_truncated(self):
        model = self._model()
        g_neg = model.diffusion(np.array([[1.0, -0.1]]))
        g_zero = model.diffusion(np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(g_neg, g_zero)

    def test_correlation_matrix(self):
        model = self._model(rho=-0.5)
        np.testing.assert_allclose(model.correlation,
                                   [[1.0, -0.5], [-0.5, 1.0]])

    def test_parameter_validation(self):
        with pytest.raises(ModelError):
            self._model(rho=-1.5)
        with pytest.raises(ModelError):
            make_model("heston", r=0.05, kappa=2.0, theta=0.04,
                       sigma=-0.3, rho=0.0, s0=1.0, v0=0.04)


class TestModelSpec:
    def _spec(self, corr):
        return ModelSpec(
            dimension=2, driver_dimension=2,
            initial_state=np.zeros(2),
            drift=lambda x: np.zeros_like(x),
            diffusion=lambda x: np.zeros((x.shape[0], 2, 2)),
            milstein_tensor=lambda x: np.zeros((x.shape[0], 2, 2, 2)),
            correlation=corr, label="test")

    def test_correlation_validation(self):
        with pytest.raises(ModelError):
            self._spec(np.array([[1.0, 0.5], [0.4, 1.0]]))  # not symmetric
        with pytest.raises(ModelError):
            self._spec(np.array([[2.0, 0.0], [0.0, 1.0]]))  # diagonal != 1
        with pytest.raises(ModelError):
            self._spec(np.array([[1.0, 2.0], [2.0, 1.0]]))  # not PSD
        with pytest.raises(ModelError):
            self._spec(np.eye(3))  # wrong shape

    @pytest.mark.parametrize("rho", [-1.0, -0.7, 0.0, 0.3, 1.0])
    def test_driver_factor_reproduces_correlation(self, rho):
        spec = self._spec(np.array([[1.0, rho], [rho, 1.0]]))
        factor = spec.driver_factor()
        np.testing.assert_allclose(factor @ factor.T, spec.correlation,
                                   atol=1e-12)

    def test_initial_state_length_check(self):
        with pytest.raises(ModelError):
            ModelSpec(dimension=2, driver_dimension=2,
                      initial_state=np.zeros(3),
                      drift=lambda x: x, diffusion=lambda x: x,
                      milstein_tensor=lambda x: x,
                      correlation=np.eye(2), label="bad")


def test_merton_carries_jump_spec():
    model = make_model("merton", alpha=0.05, beta=0.2, x0=1.0,
                       lam=1.0, mark_mu=-0.1, mark_sigma=0.2)
    assert model.jumps is not None
    assert model.jumps.mark_mu == -0.1
    assert model.label == "merton"
    # Diffusion part matches plain GBM.
    gbm = make_model("gbm", alpha=0.05, beta=0.2, x0=1.0)
    x = np.array([1.3])
    np.testing.assert_allclose(model.diffusion(x), gbm.diffusion(x))


def test_unknown_model_rejected():
    with pytest.raises(ModelError):
        make_model("bachelier")
