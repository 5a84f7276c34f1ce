import math

import numpy as np
import pytest

from vfexplore import boxworld, diagnostics as D
from vfexplore.boxworld import EnvConfig, RewardMode, Transition
from vfexplore.oracle import GaussianBump, InvalidInputError, UncertaintyField, level_radius
from vfexplore.shaping import ShapingConfig, SkewGenerator

BUMP = GaussianBump(2.0, (0.5, 0.5), 0.2)
FIELD = UncertaintyField((BUMP,))
SHAPE = ShapingConfig(u_mid=1.0, eps_unsafe=0.2)
BAND = D.BandSpec(1.0, 0.2, 0.2)
R = level_radius(BUMP, 1.0)


def tr(s, sn, field=FIELD, base=0.0, goal=False):
    s, sn = np.asarray(s, float), np.asarray(sn, float)
    return Transition(s=s, obs=s, a=sn - s, s_next=sn, obs_next=sn, base_reward=base, shaped_reward=0.0,
                      grad_term=0.0, rot_term=0.0, done=goal, terminal=goal, u_s=float(field.value(s)),
                      u_s_next=float(field.value(sn)), t=0, reached_goal=goal)


def on_circle(theta, r=R):
    return np.array([0.5 + r * math.cos(theta), 0.5 + r * math.sin(theta)])


def tangent(theta):
    # counter-clockwise unit tangent: the direction W grad U points for the default W
    return np.array([-math.sin(theta), math.cos(theta)])


class TestTangentialSpeed:
    def test_unit_projection(self):
        ts = [tr(on_circle(a), on_circle(a) + 0.05 * tangent(a)) for a in np.linspace(0, 6, 10)]
        assert float(D.tangential_speed(FIELD, BAND, ts, SHAPE.w)) == pytest.approx(0.05, rel=1e-9)

    def test_normal_motion_is_zero(self):
        ts = [tr(on_circle(a), on_circle(a, R + 0.01)) for a in np.linspace(0, 6, 10)]
        assert abs(float(D.tangential_speed(FIELD, BAND, ts, SHAPE.w))) < 1e-12

    def test_reverse(self):
        ts = [tr(on_circle(a), on_circle(a) - 0.05 * tangent(a)) for a in np.linspace(0, 6, 10)]
        assert float(D.tangential_speed(FIELD, BAND, ts, SHAPE.w)) == pytest.approx(-0.05, rel=1e-9)

    def test_no_band_flagged(self):
        out = D.tangential_speed(FIELD, BAND, [tr([0.0, 0.0], [0.01, 0.0])], SHAPE.w)
        assert out.value == 0.0 and out.flags


class TestUnsafeRate:
    def test_counts(self):
        deep = tr([0.5, 0.5], [0.5, 0.5])
        far = tr([0.0, 0.0], [0.0, 0.0])
        assert float(D.unsafe_rate(FIELD, BAND, [deep] * 3)) == 1.0
        assert float(D.unsafe_rate(FIELD, BAND, [far] * 3)) == 0.0
        assert float(D.unsafe_rate(FIELD, BAND, [deep, far, far, deep])) == 0.5
        empty = D.unsafe_rate(FIELD, BAND, [])
        assert empty.value == 0.0 and empty.flags


class TestCoverage:
    def test_all_bins(self):
        states = [on_circle((k + 0.5) * 2 * math.pi / 16) for k in range(16)]
        assert float(D.angular_coverage(FIELD, BAND, states)) == 1.0

    def test_single_sector(self):
        states = [on_circle(0.1 + 0.01 * k) for k in range(20)]
        assert float(D.angular_coverage(FIELD, BAND, states)) == 0.0625

    def test_no_band(self):
        out = D.angular_coverage(FIELD, BAND, [[0.0, 0.0]])
        assert out.value == 0.0 and out.flags

    def test_multi_bump_requires_selection(self, two_bump_field):
        with pytest.raises(D.UnsupportedConfigurationError):
            D.angular_coverage(two_bump_field, BAND, [[0.1, 0.1]])
        assert 0.0 <= float(D.angular_coverage(two_bump_field, BAND, [[0.1, 0.1]], bump=1)) <= 1.0

    def test_bins_validated(self):
        with pytest.raises(InvalidInputError):
            D.angular_coverage(FIELD, BAND, [[0.1, 0.1]], n_bins=1)


class TestOffManifold:
    def test_examples(self):
        on = [on_circle(a) for a in np.linspace(0, 6, 8)]
        far = [[0.0, 0.0]] * 8
        assert float(D.off_manifold_mass(FIELD, BAND, on, 0.1)) == 0.0
        assert float(D.off_manifold_mass(FIELD, BAND, far, 0.1)) == 1.0
        assert float(D.off_manifold_mass(FIELD, BAND, on + far, 0.1)) == 0.5
        with pytest.raises(InvalidInputError):
            D.off_manifold_mass(FIELD, BAND, on, 0.0)


class TestNoSticking:
    def test_parking_is_zero(self):
        ts = [tr(on_circle(a), on_circle(a)) for a in np.linspace(0, 6, 8)]
        assert float(D.no_sticking_value(FIELD, SHAPE, ts)) == 0.0

    def test_sign_and_linearity(self):
        fwd = [tr(on_circle(a), on_circle(a) + 0.03 * tangent(a)) for a in np.linspace(0, 6, 8)]
        rev = [tr(t.s, 2 * t.s - t.s_next) for t in fwd]
        v = float(D.no_sticking_value(FIELD, SHAPE, fwd))
        assert v > 0
        assert float(D.no_sticking_value(FIELD, SHAPE, rev)) == pytest.approx(-v, rel=1e-12)

    def test_empty(self):
        out = D.no_sticking_value(FIELD, SHAPE, [])
        assert out.value == 0.0 and out.flags


class TestGrid:
    def test_single_and_repeated(self):
        g = D.visitation_grid([[0.33, 0.71]], 10)
        assert g.sum() == 1 and g[7, 3] == 1
        g = D.visitation_grid([[0.33, 0.71]] * 5, 10)
        assert g[7, 3] == 5

    def test_uniform_binomial(self, rng):
        g = D.visitation_grid(rng.random((100_000, 2)), 10)
        assert g.sum() == 100_000
        sd = math.sqrt(100_000 * 0.01 * 0.99)
        assert np.abs(g - 1000).max() < 5 * sd

    def test_edges_and_roundtrip(self):
        g = D.visitation_grid([[1.0, 1.0], [0.0, 0.0]], 4)
        assert g[3, 3] == 1 and g[0, 0] == 1
        np.testing.assert_array_equal(D.parse_grid(D.format_grid(g, {"config_hash": "abc"})), g)


class TestReference:
    def test_witness(self, rng):
        env = EnvConfig()
        pol = D.reference_controller(FIELD, SHAPE, env)
        eps = [boxworld.run_episode(env, FIELD, SHAPE, pol, RewardMode.VF, rng) for _ in range(10)]
        after = np.array([t.s for ep in eps for t in ep[15:]])
        assert float(D.off_manifold_mass(FIELD, BAND, after, BAND.delta_band)) < 0.05
        assert float(D.no_sticking_value(FIELD, SHAPE, [t for ep in eps for t in ep])) > 0


class TestConcentration:
    def _ref(self, n=64, r=R):
        return [tr(on_circle(a, r), on_circle(a + 0.2, r)) for a in np.linspace(0, 2 * math.pi, n)]

    def test_on_manifold_pass(self):
        ref = self._ref()
        rep = D.concentration_bound_report(FIELD, BAND, SHAPE, ref, ref, eps=0.2, curvature=10.0)
        assert rep["status"] == "PASS" and rep["measured_off_manifold_mass"] == 0.0
        assert rep["v0_hat"] > 0

    def test_small_eps_vacuous(self):
        ref = self._ref()
        rep = D.concentration_bound_report(FIELD, BAND, SHAPE, ref, ref, eps=1e-9, curvature=10.0)
        assert any("vacuous" in f for f in rep["flags"])

    def test_reversed_reference_inconclusive(self):
        ref = [tr(t.s_next, t.s) for t in self._ref()]
        rep = D.concentration_bound_report(FIELD, BAND, SHAPE, ref, ref, eps=0.2, curvature=10.0)
        assert rep["status"] == "INCONCLUSIVE" and rep["v0_hat"] <= 0


class TestReport:
    def test_build(self, rng):
        env = EnvConfig()
        pol = D.reference_controller(FIELD, SHAPE, env)
        eps = [boxworld.run_episode(env, FIELD, SHAPE, pol, RewardMode.VF, rng) for _ in range(4)]
        rep = D.build_report(FIELD, BAND, SHAPE, eps)
        d = rep.to_dict()
        for k in ("unsafe_rate", "angular_coverage", "off_manifold_mass", "goal_rate"):
            assert 0.0 <= d[k] <= 1.0
        assert np.sum(d["visitation_grid"]) == sum(len(e) + 1 for e in eps)
        assert rep.n_episodes == 4 and rep.angular_coverage > 0.5

    def test_in_band_steps_before_goal(self):
        ts = [tr(on_circle(0.0), on_circle(0.1)), tr(on_circle(0.1), [0.0, 0.0]), tr([0.0, 0.0], [0.9, 0.9], goal=True),
              tr(on_circle(0.2), on_circle(0.3))]
        assert D.in_band_steps_before_goal(FIELD, BAND, ts) == 2
