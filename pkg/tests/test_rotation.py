import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import SQRT2, STEPANOFF_MEAN
from torusflow.errors import ConfigurationError
from torusflow.fields import ConstantField, catalog
from torusflow.flow import IntegratorConfig
from torusflow.invariant import spectral_invariant_densities, stepanoff_density
from torusflow.rotation import (RotationConfig, RotationEstimate, classify_points, doubling_times,
                                ensemble_rotation, estimate_C_b, estimate_D_b, rotation_vector, sample_points,
                                summarize_ensemble)

ZETA = np.array([1.0, SQRT2]) / STEPANOFF_MEAN
SHORT = IntegratorConfig(t_max=200.0)
ROT = RotationConfig(n=16, doublings=6)


class TestRotationVector:
    def test_constant_field_exact(self, fields):
        est = rotation_vector(fields["constant"], [0.3, 0.8], SHORT, rot=ROT)
        assert np.abs(est.zeta_hat - [1.0, SQRT2]).max() < 1e-12
        assert est.converged and not est.stationary
        assert est.t_converged == pytest.approx(200.0 / 2**5)

    def test_stationary_point(self, fields):
        est = rotation_vector(fields["stepanoff"], [0.0, 0.0], SHORT, rot=ROT)
        assert np.array_equal(est.zeta_hat, [0.0, 0.0])
        assert est.stationary and est.converged

    def test_stepanoff_generic_point(self, fields):
        cfg = IntegratorConfig(rel_tol=1e-6, max_step=1.0, t_max=2000.0)
        est = rotation_vector(fields["stepanoff"], [0.37, 0.61], cfg, rot=ROT)
        assert np.linalg.norm(est.zeta_hat - ZETA) < 0.03 * np.linalg.norm(ZETA)

    def test_shear_closed_form(self, fields):
        x0 = np.array([0.2, 0.1])
        est = rotation_vector(fields["shear"], x0, SHORT, rot=ROT)
        assert np.abs(est.zeta_hat - [2 + np.sin(2 * np.pi * x0[1]), 0.0]).max() < 1e-8

    def test_speed_bound_invariant(self, fields):
        for name in ("rotgrad", "fourier", "stepanoff"):
            est = rotation_vector(fields[name], [0.41, 0.27], SHORT, rot=ROT)
            assert np.linalg.norm(est.zeta_hat) <= est.speed_max + est.cauchy_gap + 1e-12, name

    def test_tol_must_be_positive(self, fields):
        with pytest.raises(ConfigurationError):
            rotation_vector(fields["constant"], [0.0, 0.0], SHORT, tol=0.0)

    def test_doubling_times(self):
        assert doubling_times(8.0, 3).tolist() == [1.0, 2.0, 4.0, 8.0]


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            RotationConfig(n=8)
        with pytest.raises(ConfigurationError):
            RotationConfig(sampler="random")
        with pytest.raises(ConfigurationError):
            RotationConfig(singleton_fraction=0.0)
        with pytest.raises(ConfigurationError):
            RotationConfig(max_nonconverged_fraction=1.0)

    def test_tolerance(self):
        rot = RotationConfig(rel_tol=0.01, abs_tol=1e-3)
        assert rot.tolerance([3.0, 4.0]) == pytest.approx(0.05)
        assert rot.tolerance([0.0, 0.0]) == 1e-3
        assert RotationConfig(n=64).null_set_bound == 8


class TestSampling:
    def test_sobol_is_seeded(self):
        a = sample_points(2, 16, seed=3)
        assert np.array_equal(a, sample_points(2, 16, seed=3))
        assert a.shape == (16, 2) and a.min() >= 0 and a.max() < 1

    def test_grid(self):
        g = sample_points(2, 16, "grid")
        assert g.shape == (16, 2)
        assert np.allclose(np.unique(g[:, 0]), [0.125, 0.375, 0.625, 0.875])


class TestClassify:
    def test_singleton(self):
        cls, *_ = classify_points([[1.0, 1.0], [1.0 + 1e-4, 1.0]], 1e-3)
        assert cls == "singleton"

    def test_segment(self):
        pts = np.outer(np.linspace(0, 1, 7), [1.0, 2.0])
        cls, hull, ends, diam, width = classify_points(pts, 1e-3)
        assert cls == "segment"
        assert diam == pytest.approx(np.sqrt(5.0))
        assert {tuple(np.round(e, 12)) for e in ends} == {(0.0, 0.0), (1.0, 2.0)}

    def test_polytope(self):
        cls, hull, *_ = classify_points([[0, 0], [1, 0], [0, 1], [0.2, 0.2]], 1e-3)
        assert cls == "polytope" and len(hull) == 3

    def test_empty(self):
        assert classify_points(np.zeros((0, 2)), 1.0)[0] == "empty"


class TestEnsembles:
    def test_constant_singleton(self, fields):
        ens = ensemble_rotation(fields["constant"], cfg=SHORT, rot=ROT)
        assert ens.is_singleton
        assert ens.diameter < 1e-12
        assert np.abs(ens.centre - [1.0, SQRT2]).max() < 1e-12

    def test_shear_not_singleton(self, fields):
        ens = ensemble_rotation(fields["shear"], cfg=SHORT, rot=RotationConfig(n=32, doublings=6))
        assert not ens.is_singleton
        assert ens.span(0) >= 1.5
        assert ens.span(1) < 1e-8
        assert ens.classification == "segment"

    def test_C_b_for_constant(self, fields):
        assert estimate_C_b(fields["constant"], cfg=SHORT, rot=ROT).classification == "singleton"

    def test_C_b_for_gradient_is_zero(self, fields):
        # (X(t) - x0) / t decays like 1 / t once trajectories settle
        cb = estimate_C_b(fields["gradient"], cfg=IntegratorConfig(t_max=2000.0), rot=ROT)
        assert cb.classification == "singleton"
        assert np.abs(cb.vectors).max() < 1e-3

    def test_late_drift_is_not_converged(self, fields):
        # a point that settles early and then drifts again stays unconverged
        est = rotation_vector(fields["stepanoff"], [0.37, 0.61], SHORT, rot=ROT)
        gaps = np.linalg.norm(np.diff(est.history, axis=0), axis=1)
        tols = [ROT.tolerance(v) for v in est.history[1:]]
        assert est.converged == bool(gaps[-1] < tols[-1])

    def test_many_unconverged_is_inconclusive(self):
        good = [RotationEstimate(np.array([1.0, 1.0]), 1.0, 0.0, False, None, True) for _ in range(12)]
        bad = [RotationEstimate(np.array([0.5, 1.0]), 1.0, 0.5, False, None, False) for _ in range(5)]
        rot = RotationConfig(n=16)
        assert summarize_ensemble(good + bad, rot).classification == "inconclusive"
        assert summarize_ensemble(good + bad[:4], rot).classification == "singleton"

    def test_threads_do_not_change_results(self, fields):
        pts = sample_points(2, 128, seed=1)
        a = ensemble_rotation(fields["rotgrad"], cfg=SHORT, rot=ROT, points=pts)
        b = ensemble_rotation(fields["rotgrad"], cfg=SHORT, rot=ROT.replace(threads=3), points=pts)
        assert np.array_equal(a.vectors, b.vectors)

    def test_csv_export(self, fields, tmp_path):
        ens = ensemble_rotation(fields["constant"], cfg=SHORT, rot=ROT)
        ens.to_csv(tmp_path / "e.csv")
        rows = (tmp_path / "e.csv").read_text().splitlines()
        assert rows[0].startswith("x0_1,x0_2,zeta_1,zeta_2") and len(rows) == 17


class TestDb:
    def test_constant_with_uniform_density(self, fields):
        db = estimate_D_b(fields["constant"], [1.0])
        assert db.classification == "singleton"
        assert np.abs(db.centre - [1.0, SQRT2]).max() < 1e-12

    def test_stepanoff_exact(self, fields):
        db = estimate_D_b(fields["stepanoff"], [stepanoff_density(fields["stepanoff"])])
        assert db.classification == "singleton"
        assert np.abs(db.centre - ZETA).max() < 1e-10

    def test_shear_distinct_densities(self, fields):
        s1 = lambda x: 1 + np.sin(2 * np.pi * x[:, 1])
        s2 = lambda x: 1 + np.cos(2 * np.pi * x[:, 1])
        db = estimate_D_b(fields["shear"], [1.0, s1, s2])
        # int (2 + sin 2 pi y)(1 + sin 2 pi y) dy = 2.5
        assert np.allclose(db.vectors[:, 0], [2.0, 2.5, 2.0], atol=1e-12)
        assert db.classification == "segment"

    def test_empty_for_gradient(self, fields):
        res = spectral_invariant_densities(fields["gradient"], K=4)
        db = estimate_D_b(fields["gradient"], res.elements)
        assert db.classification == "empty"
        assert len(db.notes) == len(res.elements) + 1


class TestProperties:
    @given(arrays(np.float64, (2,), elements=st.floats(-3, 3)),
           arrays(np.float64, (2,), elements=st.floats(0, 1)))
    def test_constant_field_rotation_is_xi(self, xi, x0):
        spec = ConstantField(tuple(xi))
        est = rotation_vector(spec, x0, IntegratorConfig(t_max=16.0), rot=RotationConfig(doublings=2))
        assert np.abs(est.zeta_hat - xi).max() < 1e-10 * (1 + np.abs(xi).max())

    @given(st.floats(0.0, 1.0))
    def test_shear_rotation_depends_on_height(self, h):

        est = rotation_vector(catalog()["shear"], [0.5, h], SHORT, rot=ROT)
        assert est.zeta_hat[0] == pytest.approx(2 + np.sin(2 * np.pi * h), abs=1e-8)
        assert abs(est.zeta_hat[1]) < 1e-12

    @given(st.lists(arrays(np.float64, (2,), elements=st.floats(-1, 1)), min_size=1, max_size=12))
    def test_hull_contains_points(self, pts):
        v = np.array(pts)
        cls, hull, ends, diam, width = classify_points(v, 1e-3)
        assert diam >= 0
        if cls in ("singleton", "segment", "polytope"):
            lo, hi = hull.min(axis=0), hull.max(axis=0)
            tol = 1e-3 + 1e-9
            if cls == "singleton":
                assert np.all(np.abs(v - hull[0]) <= tol)
            else:
                assert np.all(v >= lo - tol) and np.all(v <= hi + tol)
