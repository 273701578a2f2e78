import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracklearn.errors import DomainError
from tracklearn.geometry import Pose2
from tracklearn.vehicle import (NOMINAL_PARAMS, RandomizationConfig, SpeedGains, VehicleParams, VehicleState,
                                apply_steering, beta, dynamic_substeps, empty_delay_queue, initial_state,
                                pd_speed_controller, randomize_params, sample_param_arrays, step_dynamic,
                                step_kinematic, steady_state_yaw_rate, turn_radius)

P = NOMINAL_PARAMS


def exact_arc(v, delta, t, params=P):
    """Closed-form CoG position after driving at constant steering from the origin."""
    b = math.atan(params.L_r / params.L * math.tan(delta))
    if delta == 0.0:
        return v * t, 0.0, 0.0
    w = v * math.tan(delta) * math.cos(b) / params.L
    th = w * t
    x = v / w * (math.sin(th + b) - math.sin(b))
    y = v / w * (math.cos(b) - math.cos(th + b))
    return x, y, th


class TestParams:
    @pytest.mark.parametrize("kw", [{"m": 0.0}, {"L_r": 3.0}, {"susp_gain": 2.5}, {"delay_steps": 6},
                                    {"delay_steps": 1.5}, {"delta_max": 2.0}, {"C_f": math.nan}])
    def test_validation(self, kw):
        with pytest.raises(DomainError):
            VehicleParams(**kw)

    def test_digest_stable_and_sensitive(self):
        assert P.digest() == VehicleParams().digest()
        assert P.digest() != replace(P, m=631.0).digest()


class TestKinematic:
    def test_beta_and_radius(self):
        assert beta(P, 0.0) == 0.0
        assert turn_radius(P, 0.0) == math.inf
        d = 0.2
        assert turn_radius(P, d) == pytest.approx(math.hypot(P.L_r, P.L / math.tan(d)), rel=1e-12)
        with pytest.raises(DomainError):
            beta(P, math.pi / 2)

    @pytest.mark.parametrize("delta", [-0.4, -0.1, 0.0, 0.05, 0.3])
    def test_rk4_matches_closed_form(self, delta):
        s = initial_state(Pose2(0, 0, 0))
        for _ in range(200):
            s = step_kinematic(s, P, 5.0, delta, 0.05)
        x, y, th = exact_arc(5.0, delta, 10.0)
        assert math.hypot(s.pose.x - x, s.pose.y - y) < 1e-6
        assert abs(s.pose.theta - math.atan2(math.sin(th), math.cos(th))) < 1e-9

    def test_rejects_bad_inputs(self):
        s = initial_state(Pose2(0, 0, 0))
        with pytest.raises(DomainError):
            step_kinematic(s, P, 1.0, 0.5, 0.05)
        with pytest.raises(DomainError):
            step_kinematic(s, P, 1.0, 0.0, 0.0)

    def test_negative_speed_clamped(self):
        s = step_kinematic(initial_state(Pose2(1, 2, 0.3)), P, -3.0, 0.1, 0.05)
        assert (s.pose.x, s.pose.y, s.v_x) == (1.0, 2.0, 0.0)

    @settings(max_examples=100)
    @given(st.floats(0, 10), st.floats(-0.45, 0.45), st.floats(-math.pi, math.pi))
    def test_speed_preserved_and_heading_rate(self, v, delta, th0):
        s = step_kinematic(initial_state(Pose2(0, 0, th0)), P, v, delta, 0.05)
        assert math.hypot(s.pose.x, s.pose.y) == pytest.approx(v * 0.05, abs=1e-9) if delta == 0 else True
        assert abs(s.pose.x) <= v * 0.05 + 1e-12 and abs(s.pose.y) <= v * 0.05 + 1e-12


class TestDynamic:
    @pytest.mark.parametrize("v", [1.0, 2.0, 3.0])
    @pytest.mark.parametrize("delta", [0.0, 0.05, 0.2, -0.45])
    def test_stiff_tyres_reduce_to_kinematic(self, v, delta):
        stiff = replace(P, C_f=P.C_f * 100, C_r=P.C_r * 100)
        # the kinematic speed is the CoG speed, the dynamic v_x is body-longitudinal
        ks = initial_state(Pose2(0, 0, 0), v)
        ds = initial_state(Pose2(0, 0, 0), v * math.cos(beta(P, delta)))
        worst = 0.0
        for _ in range(200):
            ks = step_kinematic(ks, stiff, v, delta, 0.05)
            ds = step_dynamic(ds, stiff, 0.0, delta, 0.05)
            worst = max(worst, math.hypot(ks.pose.x - ds.pose.x, ks.pose.y - ds.pose.y))
        assert worst <= 0.02

    @pytest.mark.parametrize("v,delta", [(3.0, 0.05), (5.0, 0.03), (8.0, -0.02)])
    def test_steady_state_yaw_rate(self, v, delta):
        s = VehicleState(Pose2(0, 0, 0), v_x=v)
        for _ in range(200):
            s = step_dynamic(s, P, 0.0, delta, 0.05)
        # linear-model steady state uses small-angle slip; allow a small margin
        assert s.r_yaw == pytest.approx(steady_state_yaw_rate(P, v, delta), rel=0.02)
        assert s.v_x == pytest.approx(v)

    def test_standstill_stays_finite(self):
        s = VehicleState(Pose2(0, 0, 0))
        for _ in range(100):
            s = step_dynamic(s, P, 0.5, 0.3, 0.05)
            assert all(math.isfinite(v) for v in (s.pose.x, s.pose.y, s.v_y, s.r_yaw))
        for _ in range(200):
            s = step_dynamic(s, P, -3.0, 0.3, 0.05)
        assert s.v_x == 0.0

    def test_substeps_grow_at_low_speed(self):
        assert dynamic_substeps(P, 0.0, 0.05) >= dynamic_substeps(P, 10.0, 0.05) >= 5

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 10.0), st.floats(-0.45, 0.45), st.floats(-3, 3), st.floats(0.5, 1.5))
    def test_bounded_under_random_inputs(self, v, delta, a, g):
        params = replace(P, susp_gain=g)
        s = VehicleState(Pose2(0, 0, 0), v_x=v)
        for _ in range(40):
            s = step_dynamic(s, params, a, delta, 0.05)
        assert s.v_x >= 0.0
        assert abs(s.r_yaw) < 20 and abs(s.v_y) < 20


class TestSteering:
    def test_delay_line(self):
        p = replace(P, delay_steps=2)
        q = empty_delay_queue(p)
        delta, rates = 0.0, []
        for cmd in (0.1, 0.0, 0.0):
            delta, r, q = apply_steering(delta, cmd, p, q, 0.05)
            rates.append(r)
        assert rates == pytest.approx([0.0, 0.0, 0.1])

    def test_saturation(self):
        _, r, _ = apply_steering(0.0, 0.5, P, (), 0.05)
        assert r == pytest.approx(0.18)
        d, r, _ = apply_steering(P.delta_max, 0.1, P, (), 0.05)
        assert (d, r) == (P.delta_max, 0.0)
        with pytest.raises(DomainError):
            apply_steering(0.5, 0.0, P, (), 0.05)

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=60), st.integers(0, 5))
    def test_invariants(self, cmds, k):
        p = replace(P, delay_steps=k)
        q = empty_delay_queue(p)
        delta = 0.0
        for c in cmds:
            new, r, q = apply_steering(delta, c, p, q, 0.05)
            assert abs(new) <= p.delta_max
            assert abs(r) <= p.ddelta_max + 1e-12
            assert len(q) == k
            delta = new


class TestSpeedController:
    def test_examples(self):
        g = SpeedGains(k_p=1.0, k_d=0.0)
        assert pd_speed_controller(3.0, 5.0, 5.0, 3.0, g, 0.05) == pytest.approx(2.0)
        assert pd_speed_controller(0.0, 10.0, 10.0, 0.0, g, 0.05) == 3.0
        assert pd_speed_controller(10.0, 0.0, 0.0, 10.0, g, 0.05) == -3.0

    def test_derivative_term(self):
        g = SpeedGains(k_p=0.0, k_d=0.1)
        assert pd_speed_controller(0.0, 1.0, 0.0, 0.0, g, 0.05) == pytest.approx(2.0)


class TestRandomization:
    def test_mass_statistics(self):
        draws = sample_param_arrays(P, RandomizationConfig.full(0.1), np.random.default_rng(0), 100_000)
        m = draws["m"]
        assert abs(m.mean() - 630.0) <= 2.0
        assert m.min() >= 441.0 and m.max() <= 819.0
        assert set(np.unique(draws["delay_steps"])) == {0, 1, 2}

    def test_zero_fraction_is_nominal(self):
        cfg = RandomizationConfig()
        assert randomize_params(P, cfg, np.random.default_rng(0)) == P

    def test_geometry_only_leaves_tyres(self):
        p = randomize_params(P, RandomizationConfig.geometry_only(0.2), np.random.default_rng(1))
        assert (p.m, p.C_f, p.C_r, p.I_z) == (P.m, P.C_f, P.C_r, P.I_z)

    def test_validation(self):
        with pytest.raises(DomainError):
            RandomizationConfig(m=0.5)
        with pytest.raises(DomainError):
            RandomizationConfig(delay_choices=(7,))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.3))
    def test_draws_are_valid_params(self, seed, frac):
        p = randomize_params(P, RandomizationConfig.full(frac), np.random.default_rng(seed))
        assert 0 < p.L_r < p.L
        assert abs(p.m - P.m) <= 3 * frac * P.m + 1e-9
