import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from torusflow.errors import ConfigurationError, StepSizeUnderflow
from torusflow.fields import ConstantField, StepanoffField, catalog
from torusflow.flow import (RESIDUAL_CONSTANT, IntegratorConfig, check_equivariance, check_semigroup,
                            finite_difference_flow_jacobian, flow_map, integrate, integrate_batch,
                            jacobian_determinant, ode_residual)

SQRT2 = float(np.sqrt(2.0))
TIGHT = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12)
# RK4 with step 1e-5, frozen from tests/oracles/fixed_step_oracle.py
STEPANOFF_X1_FROM_CENTRE = (1.0317810512904808, 1.2520519749480068)


class TestIntegrate:
    def test_constant_field_translates(self):
        traj = integrate(ConstantField((1.0, 0.0)), [0.2, 0.2], 3.0)
        assert np.allclose(traj.final_position, [3.2, 0.2], atol=1e-12)
        assert traj.times[0] == 0.0 and np.array_equal(traj.positions[0], [0.2, 0.2])

    def test_stationary_point_stays_put(self, fields):
        traj = integrate(fields["stepanoff"], [0.0, 0.0], 50.0)
        assert np.array_equal(traj.final_position, [0.0, 0.0])
        assert traj.final_log_jacobian == 0.0
        assert traj.near_stationary

    def test_stepanoff_matches_fixed_step_oracle(self, fields):
        traj = integrate(fields["stepanoff"], [0.5, 0.5], 1.0)
        assert np.abs(traj.final_position - STEPANOFF_X1_FROM_CENTRE).max() < 1e-7

    def test_backward_integration_inverts(self, fields):
        spec = fields["rotgrad"]
        fwd = integrate(spec, [0.3, 0.1], 4.0, TIGHT).final_position
        back = integrate(spec, fwd, -4.0, TIGHT).final_position
        assert np.abs(back - [0.3, 0.1]).max() < 1e-8

    def test_winding_is_floor_of_lifted_position(self, fields):
        traj = integrate(fields["shear"], [0.1, 0.3], 5.0)
        assert np.array_equal(traj.winding, np.floor(traj.positions).astype(int))
        assert traj.winding[-1, 0] >= 9

    def test_csv_export(self, fields, tmp_path):
        traj = integrate(fields["constant"], [0.0, 0.0], 2.0)
        traj.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0].split(",") == ["t", "x1", "x2", "winding1", "winding2", "log_jacobian"]
        assert len(lines) == len(traj.times) + 1

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            IntegratorConfig(min_step=1.0, max_step=0.5)
        with pytest.raises(ConfigurationError):
            IntegratorConfig(rel_tol=0.0)

    def test_step_underflow_carries_state(self, fields):
        cfg = IntegratorConfig(rel_tol=1e-14, abs_tol=1e-16, min_step=0.2, max_step=0.25)
        with pytest.raises(StepSizeUnderflow) as info:
            integrate(fields["rotgrad"], [0.3, 0.1], 5.0, cfg)
        assert info.value.state is not None

    def test_interpolated_samples_match_landed_samples(self, fields):
        spec = fields["stepanoff"]
        x0 = np.array([[0.3, 0.2], [0.7, 0.4]])
        times = np.linspace(0.05, 6.0, 37)
        landed = integrate_batch(spec, x0, 6.0, sample_times=times).samples
        dense = integrate_batch(spec, x0, 6.0, sample_times=times, interpolate=True).samples
        assert np.abs(landed - dense).max() < 1e-6


class TestJacobian:
    def test_identity_at_time_zero(self, compressible):
        assert jacobian_determinant(compressible, [0.1, 0.0], 0.0) == 1.0

    def test_compressible_field_matches_finite_differences(self, compressible):
        j = jacobian_determinant(compressible, [0.1, 0.0], 0.5, TIGHT)
        fd = np.linalg.det(finite_difference_flow_jacobian(compressible, [0.1, 0.0], 0.5, TIGHT))
        assert abs(j - fd) < 1e-5
        assert abs(j - 1.0) > 1e-2

    def test_divergence_free_fields_preserve_volume(self, fields):
        for name in ("constant", "shear", "rotgrad"):
            for x0 in ([0.1, 0.7], [0.45, 0.2]):
                assert abs(jacobian_determinant(fields[name], x0, 3.0) - 1.0) < 1e-8, name

    def test_log_jacobian_small_for_divergence_free(self, fields):
        traj = integrate(fields["rotgrad"], [0.2, 0.9], 20.0)
        assert np.abs(traj.log_jacobian).max() < 1e-8


class TestStructure:
    def test_semigroup_constant(self, fields):
        assert check_semigroup(fields["constant"], [0.3, 0.3], 1.3, 2.1) < 1e-12

    def test_semigroup_stepanoff(self, fields):
        assert check_semigroup(fields["stepanoff"], [0.5, 0.5], 2.0, 2.0, TIGHT) < 1e-6

    def test_equivariance_constant(self, fields):
        assert check_equivariance(fields["constant"], [0.3, 0.3], [1, -2], 4.0) < 1e-12

    def test_equivariance_stepanoff(self, fields):
        assert check_equivariance(fields["stepanoff"], [0.3, 0.4], [1, 0], 5.0, TIGHT) < 1e-6

    def test_equivariance_shear(self, fields):
        assert check_equivariance(fields["shear"], [0.3, 0.4], [2, -1], 10.0, TIGHT) < 1e-6

    def test_non_integer_shift_rejected(self, fields):
        with pytest.raises(ConfigurationError):
            check_equivariance(fields["constant"], [0.0, 0.0], [0.5, 0.0], 1.0)

    def test_dense_output_residual_bounded(self, fields):
        for name in ("stepanoff", "rotgrad", "composite"):
            traj = integrate(fields[name], [0.3, 0.6], 5.0, dense=True)
            assert ode_residual(fields[name], traj) < RESIDUAL_CONSTANT, name


class TestProperties:
    @given(arrays(np.float64, (2,), elements=st.floats(0, 1)), st.floats(0.1, 1.0))
    def test_inverse_flow_over_catalog(self, x0, t):
        # backward integration amplifies errors by up to exp(t sup|div b|),
        # so dissipative fields are probed on short horizons only
        for name, spec in catalog().items():
            assert check_semigroup(spec, x0, -t, t, TIGHT) < 1e-6, name

    @given(arrays(np.float64, (2,), elements=st.floats(0, 1)), st.floats(1.0, 10.0))
    def test_inverse_flow_long_horizon_volume_preserving(self, x0, t):
        for name in ("constant", "shear", "rotgrad"):
            assert check_semigroup(catalog()[name], x0, -t, t, TIGHT) < 1e-6, name

    @given(arrays(np.float64, (2,), elements=st.floats(0, 1)),
           arrays(np.int64, (2,), elements=st.integers(-2, 2)), st.floats(0.1, 3.0))
    def test_equivariance_over_catalog(self, x0, k, t):
        for name, spec in catalog().items():
            assert check_equivariance(spec, x0, k, t, TIGHT) < 1e-6, name

    @given(arrays(np.float64, (2,), elements=st.floats(0, 1)), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
    def test_semigroup_over_catalog(self, x0, s, t):
        for name, spec in catalog().items():
            assert check_semigroup(spec, x0, s, t, TIGHT) < 1e-6, name

    @given(arrays(np.float64, (3,), elements=st.floats(0, 1)), st.floats(0.1, 2.0))
    def test_three_dimensional_equivariance(self, x0, t):
        spec = StepanoffField(0.75, (1.0, SQRT2, np.sqrt(3.0)))
        assert check_equivariance(spec, x0, [1, 0, -1], t, TIGHT) < 1e-6

    @given(arrays(np.float64, (2,), elements=st.floats(0, 1)), st.floats(0.1, 2.0))
    def test_batch_rows_are_independent(self, x0, t):
        spec = catalog()["composite"]
        alone = flow_map(spec, x0[None, :], t)
        together = flow_map(spec, np.stack([x0, np.array([0.9, 0.1]), np.array([0.5, 0.5])]), t)
        assert np.abs(together[0] - alone[0]).max() < 1e-12
