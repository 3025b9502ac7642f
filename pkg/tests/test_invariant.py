import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import STEPANOFF_MEAN
from torusflow.errors import ConfigurationError, QuadratureDivergence
from torusflow.fields import FourierScalar, FourierTable, Reciprocal, StepanoffRho, catalog, default_sigma_star
from torusflow.invariant import (LIOUVILLE_THRESHOLD, QuadratureConfig, closed_form_density, default_modes,
                                 density_transport_check, divergence_matrix, liouville_residual,
                                 nonnegative_combination, periodic_mean, perturbed_densities,
                                 spectral_invariant_densities, stepanoff_density)


@pytest.fixture(scope="module")
def sigma_s(fields):
    return stepanoff_density(fields["stepanoff"])


class TestPeriodicMean:
    def test_constant(self):
        assert periodic_mean(1.0, dim=2).value == 1.0

    def test_sin_squared(self):
        res = periodic_mean(lambda x: np.sin(np.pi * x[:, 0]) ** 2, dim=2)
        assert res.value == pytest.approx(0.5, abs=1e-14)

    def test_vector_integrand(self):
        res = periodic_mean(lambda x: np.stack([np.cos(2 * np.pi * x[:, 1]) ** 2, 1 + 0 * x[:, 0]], 1), dim=2)
        assert np.allclose(res.value, [0.5, 1.0], atol=1e-14)

    def test_stepanoff_reciprocal_matches_oracle(self):
        res = periodic_mean(Reciprocal(StepanoffRho(0.75, 2)))
        assert res.value == pytest.approx(STEPANOFF_MEAN, rel=5e-4)
        assert not res.divergent
        assert res.ring_ratio < 0.99

    def test_non_integrable_singularity(self):
        # |x|^-2.4 near the origin is not integrable in two dimensions
        sing = lambda x: 1.0 / np.sum(np.sin(np.pi * x) ** 2, axis=1) ** 1.2
        res = periodic_mean(sing, dim=2, singular_points=np.zeros((1, 2)))
        assert res.divergent
        with pytest.raises(QuadratureDivergence):
            periodic_mean(sing, dim=2, singular_points=np.zeros((1, 2)), strict=True)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            QuadratureConfig(base_resolution=4)
        with pytest.raises(ConfigurationError):
            QuadratureConfig(max_depth=13)

    def test_missing_dimension(self):
        with pytest.raises(ConfigurationError):
            periodic_mean(lambda x: x[:, 0])


class TestStepanoffDensity:
    def test_value_at_centre(self, sigma_s):
        got = float(sigma_s(np.array([[0.5, 0.5]]))[0])
        assert got == pytest.approx(2 ** -0.75 / STEPANOFF_MEAN, rel=5e-4)

    def test_normalized_and_singular(self, sigma_s):
        assert abs(sigma_s.mean - 1.0) < 1e-6
        assert sigma_s.singular and sigma_s.is_density

    def test_liouville_residual(self, sigma_s):
        assert sigma_s.liouville_residual < LIOUVILLE_THRESHOLD
        assert sigma_s.invariant

    def test_transport_identity(self, sigma_s, fields):
        y = np.random.default_rng(0).uniform(0, 1, (40, 2))
        assert density_transport_check(sigma_s, fields["stepanoff"], 1.0, y) < 1e-4

    def test_transport_identity_at_time_zero(self, sigma_s, fields):
        assert density_transport_check(sigma_s, fields["stepanoff"], 0.0, [[0.4, 0.3]]) == 0.0

    def test_wrong_kind_rejected(self, fields):
        with pytest.raises(ConfigurationError):
            stepanoff_density(fields["shear"])
        with pytest.raises(ConfigurationError):
            closed_form_density(fields["gradient"])


class TestLiouvilleResidual:
    def test_divergence_free_with_uniform_density(self, fields):
        assert liouville_residual(1.0, fields["shear"]) < 1e-10
        assert liouville_residual(1.0, fields["constant"]) < 1e-10

    def test_gradient_field_residual_is_pi(self, fields):
        # int 2 pi sin^2(2 pi x1) dx = pi, normalized by |k| sup|b| = 1
        assert liouville_residual(1.0, fields["gradient"], [[1, 0]]) == pytest.approx(np.pi, rel=1e-10)

    def test_zero_mode_rejected(self, fields):
        with pytest.raises(ConfigurationError):
            liouville_residual(1.0, fields["constant"], [[0, 0]])

    def test_default_modes_half_set(self):
        m = default_modes(2, 4)
        assert len(m) == (9 * 9 - 1) // 2
        assert not any(np.array_equal(a, -b) for a in m for b in m)


class TestSpectral:
    def test_uniform_density_for_constant_field(self, fields):
        r = spectral_invariant_densities(fields["constant"], K=4)
        assert r.nullity == 1 and r.mean_bearing
        e = r.elements[0]
        assert e.is_density and abs(e.mean - 1.0) < 1e-12
        assert e.min_sampled == pytest.approx(1.0, abs=1e-10)

    def test_shear_null_space_contains_x2_modes(self, fields):
        K = 8
        r = spectral_invariant_densities(fields["shear"], K=K)
        assert r.nullity >= 2 * K + 1
        # sigma(x2) = 1 + 0.5 cos(2 pi x2) lies in the span
        M, modes = divergence_matrix(fields["shear"], K)
        target = FourierTable.from_terms(2, [((0, 0), 0, 1.0, 0.0), ((0, 1), 0, 0.5, 0.0)]).dense(K).ravel()
        assert np.abs(M @ target).max() < 1e-10

    def test_recovers_prescribed_density(self, fields):
        r = spectral_invariant_densities(fields["composite"], K=8)
        want = default_sigma_star().table.dense(8)
        got = r.elements[0].table.dense(8)
        assert np.abs(got - want).max() / np.abs(want).max() < 1e-6
        assert r.elements[0].liouville_residual < LIOUVILLE_THRESHOLD

    def test_null_space_residuals(self, fields):
        for name in ("composite", "shear", "constant"):
            r = spectral_invariant_densities(fields[name], K=6)
            assert np.all(r.residuals <= r.svd_tol * r.operator_norm * 1.0001), name

    def test_gradient_field_has_no_nonnegative_element(self, fields):
        r = spectral_invariant_densities(fields["gradient"], K=8)
        assert not r.densities
        t, _ = nonnegative_combination(r)
        assert t < 0
        assert perturbed_densities(r, fields["gradient"]) == []

    def test_perturbed_densities_stay_nonnegative(self, fields):
        r = spectral_invariant_densities(fields["shear"], K=4)
        out = perturbed_densities(r, fields["shear"])
        assert out
        for s in out:
            assert s.min_sampled >= -1e-8 and abs(s.mean - 1.0) < 1e-10

    def test_cutoff_validated(self, fields):
        with pytest.raises(ConfigurationError):
            spectral_invariant_densities(fields["constant"], K=3)


class TestProperties:
    @given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.integers(1, 3))
    def test_any_function_of_x2_is_invariant_for_shear(self, a, c, m):
        sigma = FourierScalar(FourierTable.from_terms(2, [((0, 0), 0, 1.0, 0.0), ((0, m), 0, a, c)]))
        assert liouville_residual(sigma, catalog()["shear"]) < 1e-10

    @given(st.floats(0.1, 2.0))
    def test_uniform_density_transported_by_divergence_free_flows(self, t):
        y = np.random.default_rng(1).uniform(0, 1, (8, 2))
        for name in ("constant", "shear", "rotgrad"):
            assert density_transport_check(lambda x: np.ones(len(x)), catalog()[name], t, y) < 1e-8, name
