"""Problem container and validation-gate behavior."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfglat import (Discretization, DiscreteMeasure, InitialMeasure,
                    ProblemSpec, SplitDynamics, validate)
from mfglat.errors import ConfigurationError
from mfglat.problem import m0_mass_estimate


def scalar_problem(a1=lambda t, x: 0.0 * x, b1=lambda t, x: np.ones_like(x)):
    dyn = SplitDynamics(dim_d=1, dim_r=1, a1=a1, b1=b1)
    from mfglat import CostSpec
    costs = CostSpec(ell0=lambda t, a, x: 0.5 * np.sum(a * a, axis=-1),
                     coupling_f=lambda t, x, mu: np.zeros(np.shape(x)[0]),
                     terminal_g=lambda x, mu: np.zeros(np.shape(x)[0]))
    init = InitialMeasure(density=lambda x: np.ones(np.shape(x)[0]) / 0.04,
                          support_box=np.array([[-0.02, 0.02]]))
    return ProblemSpec(dynamics=dyn, costs=costs, initial=init, horizon=1.0,
                       label="toy")


class TestValidate:
    def test_reference_configuration_passes(self, ex1, ex1_disc):
        rep = validate(ex1, ex1_disc)
        assert rep.ok and rep.errors == []
        assert rep.ratio == pytest.approx(0.2)
        assert rep.ratio_bound == pytest.approx(1.0)
        assert rep.max_admissible_dx == pytest.approx(1.0 / 30.0)
        assert rep.m0_mass == pytest.approx(1.0, abs=1e-9)
        assert rep.min_abs_det_b1 >= 1.0 - 1e-12

    def test_mesh_ratio_violation_is_reported(self):
        prob = scalar_problem()
        disc = Discretization(n_t=30, n_s=20, horizon=1.0, epsilon=0.01)
        rep = validate(prob, disc)  # dx = 1/20 > dt = 1/30
        assert not rep.ok
        assert any("ratio" in msg or "dx" in msg for _, msg in rep.errors)

    def test_singular_control_matrix_is_caught(self):
        prob = scalar_problem(b1=lambda t, x: np.zeros_like(x))
        disc = Discretization(n_t=10, n_s=50, horizon=1.0, epsilon=0.01)
        rep = validate(prob, disc)
        assert not rep.ok
        assert any(cat == "structural" for cat, _ in rep.errors)

    def test_unnormalized_density_is_caught(self):
        prob = scalar_problem()
        bad = InitialMeasure(density=lambda x: 2.0 * np.ones(np.shape(x)[0]),
                             support_box=np.array([[-0.5, 0.5]]))
        prob = ProblemSpec(dynamics=prob.dynamics, costs=prob.costs,
                           initial=bad, horizon=1.0, label="bad-mass")
        disc = Discretization(n_t=10, n_s=50, horizon=1.0, epsilon=0.01)
        rep = validate(prob, disc)
        assert not rep.ok
        assert any("mass" in msg for _, msg in rep.errors)

    def test_size_forecast_tracks_built_sets(self, ex1, ex1_disc, ex1_levels):
        rep = validate(ex1, ex1_disc)
        built = ex1_levels.sizes()
        fc = rep.set_size_forecast
        assert fc[0] == built[0]   # S_0 is exact, not estimated
        assert abs(fc[-1] - built[-1]) <= 0.10 * built[-1]


class TestDiscretization:
    def test_spacings(self):
        d = Discretization(n_t=30, n_s=150, horizon=1.0, epsilon=0.002)
        assert d.dt == pytest.approx(1.0 / 30.0)
        assert d.dx == pytest.approx(1.0 / 150.0)
        assert len(d.times()) == 31
        assert d.times()[-1] == pytest.approx(1.0)

    def test_rejects_nonsense(self):
        with pytest.raises(ConfigurationError):
            Discretization(n_t=0, n_s=10, horizon=1.0, epsilon=0.01)
        with pytest.raises(ConfigurationError):
            Discretization(n_t=10, n_s=10, horizon=1.0, epsilon=-1.0)


class TestDiscreteMeasure:
    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            DiscreteMeasure(atoms=np.array([0.0, 1.0]),
                            weights=np.array([1.0]))

    @given(st.integers(min_value=1, max_value=40), st.integers(0, 2**31 - 1))
    def test_total_mass_matches_weights(self, n, seed):
        rng = np.random.default_rng(seed)
        w = rng.random(n) + 1e-3
        mu = DiscreteMeasure(atoms=rng.normal(size=n), weights=w)
        assert mu.total_mass == pytest.approx(w.sum(), rel=1e-12)


def test_m0_mass_estimate_on_reference_density(ex1):
    assert m0_mass_estimate(ex1) == pytest.approx(1.0, abs=1e-6)


def test_dynamics_eval_shapes(ex2):
    x = np.array([[0.1, 0.2], [0.0, -0.3], [0.5, 0.5]])
    a1, a2, b1, b2 = ex2.dynamics.eval_all(0.0, x)
    assert a1.shape == (3, 1)
    assert a2.shape == (3, 1)
    assert b1.shape == (3, 1, 1)
    assert b2.shape == (3, 1, 1)
    # velocity/position chain: position drifts with the velocity coordinate
    np.testing.assert_allclose(a2[:, 0], x[:, 0], atol=1e-15)
    np.testing.assert_allclose(b2, 0.0, atol=1e-15)
