import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vfexplore.oracle import (
    GaussianBump,
    InvalidInputError,
    UncertaintyField,
    curvature_bound,
    level_radius,
    max_operator_norm,
    min_gradient_norm_in_band,
    psi_hessian,
    sample_region,
)


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f, x, h=1e-6):
    cols = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=1)


def rel_err(a, b, floor=1e-8):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), floor)


class TestValue:
    def test_center_equals_amplitude(self, unit_bump_field):
        assert unit_bump_field.value(np.array([0.5, 0.5])) == 1.0

    def test_one_sigma_away(self, unit_bump_field):
        # independent evaluation of A exp(-r^2 / 2 sigma^2) at r = sigma
        assert unit_bump_field.value(np.array([0.6, 0.5])) == pytest.approx(math.exp(-0.5), rel=1e-12)
        assert math.exp(-0.5) == pytest.approx(0.60653, abs=1e-5)

    def test_far_field_vanishes(self, unit_bump_field):
        assert unit_bump_field.value(np.array([50.0, -50.0])) == 0.0

    def test_batch_matches_pointwise(self, two_bump_field, rng):
        pts = rng.random((20, 2))
        batch = two_bump_field.value(pts)
        assert batch.shape == (20,)
        np.testing.assert_allclose(batch, [two_bump_field.value(p) for p in pts], rtol=0, atol=0)

    def test_dimension_mismatch(self, unit_bump_field):
        with pytest.raises(InvalidInputError):
            unit_bump_field.value(np.zeros(3))
        with pytest.raises(InvalidInputError):
            unit_bump_field.gradient(np.zeros((4, 3)))

    @pytest.mark.parametrize("bad", [{"amplitude": 0.0}, {"amplitude": -1.0}, {"sigma": 0.0}])
    def test_bump_validation(self, bad):
        kw = {"amplitude": 1.0, "center": (0.5, 0.5), "sigma": 0.1, **bad}
        with pytest.raises(InvalidInputError):
            GaussianBump(**kw)

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(InvalidInputError):
            UncertaintyField((GaussianBump(1.0, (0.0, 0.0), 0.1), GaussianBump(1.0, (0.0, 0.0, 0.0), 0.1)))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
    def test_bounded_by_total_amplitude(self, s):
        f = UncertaintyField.from_specs(
            [{"amplitude": 2.0, "center": [0.3, 0.6], "sigma": 0.15}, {"amplitude": 1.5, "center": [0.7, 0.3], "sigma": 0.2}]
        )
        u = f.value(np.array(s))
        assert 0.0 <= u <= f.amplitude_total

    def test_empty_field_is_zero(self):
        f = UncertaintyField((), 2)
        assert f.value(np.array([0.3, 0.3])) == 0.0
        np.testing.assert_array_equal(f.gradient(np.array([0.3, 0.3])), np.zeros(2))


class TestGradient:
    def test_center_is_critical(self, unit_bump_field):
        np.testing.assert_array_equal(unit_bump_field.gradient(np.array([0.5, 0.5])), [0.0, 0.0])

    def test_one_sigma_example(self, unit_bump_field):
        s = np.array([0.6, 0.5])
        g = unit_bump_field.gradient(s)
        fd = fd_gradient(unit_bump_field.value, s)
        assert rel_err(g, fd) < 1e-5
        assert g[0] == pytest.approx(-math.exp(-0.5) / 0.01 * 0.1, rel=1e-12)
        # -exp(-1/2) / sigma^2 * (s - c) = -6.0653...; a factor-ten larger figure would contradict the FD oracle
        assert g[0] == pytest.approx(-6.0653, abs=1e-4)
        assert g[1] == 0.0

    def test_symmetric_pair_cancels(self):
        f = UncertaintyField.from_specs(
            [{"amplitude": 1.0, "center": [0.3, 0.5], "sigma": 0.2}, {"amplitude": 1.0, "center": [0.7, 0.5], "sigma": 0.2}]
        )
        assert abs(f.gradient(np.array([0.5, 0.5]))[0]) < 1e-15

    def test_matches_finite_differences(self, two_bump_field, rng):
        pts = rng.random((1000, 2))
        worst = max(rel_err(two_bump_field.gradient(p), fd_gradient(two_bump_field.value, p)) for p in pts)
        assert worst < 1e-5

    def test_three_dimensional(self, rng):
        f = UncertaintyField.from_specs([{"amplitude": 1.3, "center": [0.2, 0.4, 0.6], "sigma": 0.3}])
        for p in rng.random((50, 3)):
            assert rel_err(f.gradient(p), fd_gradient(f.value, p)) < 1e-5


class TestHessian:
    def test_center(self, unit_bump_field):
        h = unit_bump_field.hessian(np.array([0.5, 0.5]))
        np.testing.assert_allclose(h, -(1.0 / 0.01) * np.eye(2), rtol=1e-14)
        fd = fd_jacobian(unit_bump_field.gradient, np.array([0.5, 0.5]))
        assert rel_err(h, fd) < 1e-4

    def test_matches_finite_differences(self, two_bump_field, rng):
        pts = rng.random((300, 2))
        worst = max(rel_err(two_bump_field.hessian(p), fd_jacobian(two_bump_field.gradient, p)) for p in pts)
        assert worst < 1e-4

    def test_exactly_symmetric(self, two_bump_field, rng):
        h = two_bump_field.hessian(rng.random((100, 2)))
        np.testing.assert_array_equal(h, np.swapaxes(h, 1, 2))

    def test_far_field(self, unit_bump_field):
        np.testing.assert_array_equal(unit_bump_field.hessian(np.array([40.0, 40.0])), np.zeros((2, 2)))


class TestCurvatureBound:
    def test_zero_field(self, rng):
        assert curvature_bound(UncertaintyField((), 2), (0.0, 1.0), 1000, rng, u_mid=0.5) == 0.0

    def test_dominates_every_sample(self, two_bump_field):
        pts = sample_region((0.0, 1.0), 2, 2000, np.random.default_rng(3))
        bound = curvature_bound(two_bump_field, (0.0, 1.0), 2000, np.random.default_rng(3), u_mid=1.0)
        norms = np.abs(np.linalg.eigvalsh(psi_hessian(two_bump_field, pts, 1.0))).max(axis=1)
        assert np.all(norms <= bound)

    def test_nested_samples_monotone(self, two_bump_field):
        pts = sample_region((0.0, 1.0), 2, 4000, np.random.default_rng(9))
        assert max_operator_norm(two_bump_field, pts[:2000], 1.0) <= max_operator_norm(two_bump_field, pts, 1.0)

    def test_deterministic(self, two_bump_field):
        a = curvature_bound(two_bump_field, (0, 1), 500, np.random.default_rng(1), u_mid=1.0)
        b = curvature_bound(two_bump_field, (0, 1), 500, np.random.default_rng(1), u_mid=1.0)
        assert a == b

    def test_psi_hessian_matches_finite_differences(self, two_bump_field, rng):
        def psi_grad(p):
            x = two_bump_field.value(p) - 1.0
            return np.tanh(x) * two_bump_field.gradient(p)

        for p in rng.random((100, 2)):
            assert rel_err(psi_hessian(two_bump_field, p, 1.0), fd_jacobian(psi_grad, p)) < 1e-4

    def test_errors(self, two_bump_field, rng):
        with pytest.raises(InvalidInputError):
            curvature_bound(two_bump_field, (1.0, 0.0), 10, rng)
        with pytest.raises(InvalidInputError):
            curvature_bound(two_bump_field, (0.0, 1.0), 0, rng)


def test_level_radius_lands_on_level():
    b = GaussianBump(3.0, (0.5, 0.5), 0.25)
    r = level_radius(b, 1.5)
    f = UncertaintyField((b,))
    assert f.value(np.array([0.5 + r, 0.5])) == pytest.approx(1.5, rel=1e-13)
    with pytest.raises(InvalidInputError):
        level_radius(b, 3.0)


def test_min_gradient_in_band(two_bump_field, rng):
    g0, n = min_gradient_norm_in_band(two_bump_field, 1.0, 0.1, (0, 1), 20000, rng)
    assert n > 0 and g0 > 0
    g_none, n_none = min_gradient_norm_in_band(two_bump_field, 100.0, 0.1, (0, 1), 100, rng)
    assert n_none == 0 and math.isnan(g_none)


def test_dominant_bump(two_bump_field):
    assert two_bump_field.dominant_bump(np.array([0.3, 0.6])) == 0
    assert two_bump_field.dominant_bump(np.array([0.7, 0.3])) == 1
