import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from softhybrid import baseline as bl
from softhybrid.baseline import ArmParams, ArmState, arm_step, cc_control
from softhybrid.core import Metric
from softhybrid.hybrid import KinematicsOnlyController

CENTER = bl.center_arm()


def simulate(params, torque, q0=0.0, v0=0.0, dt=1e-3, t_end=1.0):
    s = ArmState(q0, v0)
    out = [s.q]
    for _ in range(int(round(t_end / dt))):
        s = arm_step(s, params, torque, dt)
        out.append(s.q)
    return np.array(out)


class TestParams:
    def test_center_mapping(self):
        assert (CENTER.B, CENTER.C, CENTER.K_stiff) == pytest.approx((0.005, 0.1, 1.0))

    def test_grid(self):
        arms = bl.grid_arms()
        assert len(arms) == 25
        assert len({(a.youngs_modulus, a.poisson_ratio) for a in arms}) == 25
        assert arms[12] == CENTER

    def test_mapping_trends(self):
        soft, stiff = ArmParams.from_material(5, 0.5), ArmParams.from_material(15, 0.5)
        assert stiff.K_stiff == pytest.approx(3 * soft.K_stiff) and stiff.B == soft.B
        assert ArmParams.from_material(10, 0.25).C > ArmParams.from_material(10, 0.75).C

    @pytest.mark.parametrize("kw", [{"B": 0.0}, {"C": -1.0}, {"youngs_modulus": 4.0}, {"poisson_ratio": 0.8}])
    def test_invalid(self, kw):
        base = dict(B=0.005, C=0.1, K_stiff=1.0)
        with pytest.raises(ValueError):
            ArmParams(**{**base, **kw})


class TestDynamics:
    def test_static_equilibrium(self):
        q = simulate(CENTER, CENTER.K_stiff * 1.0, t_end=3.0)
        assert q[-1] == pytest.approx(1.0, abs=1e-6)

    def test_overdamped_decay_is_monotone(self):
        p = ArmParams(B=0.005, C=1.0, K_stiff=1.0)
        q = simulate(p, 0.0, q0=2.0, t_end=8.0)
        assert np.all(np.diff(q) <= 0) and q[-1] < 0.01

    def test_step_response_matches_closed_form(self):
        p = CENTER
        wn = math.sqrt(p.K_stiff / p.B)
        zeta = p.C / (2 * math.sqrt(p.K_stiff * p.B))
        wd = wn * math.sqrt(1 - zeta ** 2)
        q0 = 1.0
        dt = 1e-4
        t = np.arange(int(1.0 / dt) + 1) * dt
        exact = q0 * (1 - np.exp(-zeta * wn * t) * (np.cos(wd * t) + zeta / math.sqrt(1 - zeta ** 2) * np.sin(wd * t)))
        q = simulate(p, p.K_stiff * q0, dt=dt, t_end=1.0)
        assert np.max(np.abs(q - exact)) <= 0.01 * q0

    @given(st.floats(0.0, 2.4), st.floats(-20.0, 20.0), st.floats(1e-4, 0.1),
           st.sampled_from(bl.grid_arms()))
    def test_unforced_energy_never_grows(self, q0, v0, dt, params):
        s = ArmState(q0, v0)
        for _ in range(50):
            nxt = arm_step(s, params, 0.0, dt)
            assert nxt.energy(params) <= s.energy(params) * (1 + 1e-12) + 1e-15
            s = nxt

    def test_first_order_convergence(self):
        ref = simulate(CENTER, 0.7, q0=0.2, dt=1e-5, t_end=0.5)[::1000]
        errs = []
        for dt in (1e-2, 5e-3, 2.5e-3):
            q = simulate(CENTER, 0.7, q0=0.2, dt=dt, t_end=0.5)
            errs.append(np.max(np.abs(q[::int(round(1e-2 / dt))] - ref)))
        assert 0.4 < errs[1] / errs[0] < 0.6 and 0.4 < errs[2] / errs[1] < 0.6

    @given(st.floats(-100, 100))
    def test_workspace_clamp(self, torque):
        s = ArmState(1.2, 0.0)
        for _ in range(30):
            s = arm_step(s, CENTER, torque, 0.01)
            assert 0.0 <= s.q <= 2.4

    def test_deterministic(self):
        assert np.array_equal(simulate(CENTER, 0.9), simulate(CENTER, 0.9))

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            arm_step(ArmState(), CENTER, 0.0, 0.0)


class TestCC:
    def test_perfect_tracking_is_feedforward(self):
        s = ArmState(q=0.8)
        for _ in range(10):
            tau = cc_control(s, CENTER, 0.8, 0.3, -1.0, gain_i=5.0, dt=0.1)
            assert s.integral_error == 0.0
            assert tau == pytest.approx(CENTER.B * -1.0 + CENTER.C * 0.3 + CENTER.K_stiff * 0.8)

    def test_constant_target_without_integral(self):
        s = ArmState(q=0.3)
        assert cc_control(s, CENTER, 1.1, 0.0, 0.0, gain_i=0.0, dt=0.1) == pytest.approx(1.1)

    def test_negative_gain(self):
        with pytest.raises(ValueError):
            cc_control(ArmState(), CENTER, 1.0, 0.0, 0.0, -1.0, 0.1)

    @pytest.mark.parametrize("gain", [0.0, 2.0])
    def test_integral_action_removes_model_bias(self, gain):
        plant = ArmParams(CENTER.B, CENTER.C, 1.2 * CENTER.K_stiff)
        s = ArmState(q=1.0)
        ctrl = ArmState()
        for _ in range(600):
            ctrl.q = s.q
            tau = cc_control(ctrl, CENTER, 1.0, 0.0, 0.0, gain, 0.1)
            for _ in range(20):
                s = arm_step(s, plant, tau, 0.005)
        if gain == 0.0:
            assert abs(s.q - 1.0) == pytest.approx(1.0 - 1.0 / 1.2, rel=1e-6)
        else:
            assert abs(s.q - 1.0) < 1e-6


class TestConversions:
    @given(st.floats(-1, 1))
    def test_command_round_trip(self, c):
        assert bl.command_from_torque(bl.torque_from_command(c)) == pytest.approx(c, abs=1e-12)

    def test_rest_command_holds_mid_workspace(self):
        assert bl.torque_from_command(0.0) == pytest.approx(CENTER.K_stiff * bl.Q_MID)
        assert bl.centred_angle(bl.Q_MID) == 0.0

    def test_range_reaches_limits_for_stiffest(self):
        stiff = ArmParams.from_material(15.0, 0.5)
        assert bl.torque_from_command(1.0) / stiff.K_stiff >= bl.Q_MAX


class TestRollouts:
    def test_trajectory_inside_workspace(self):
        q = bl.angle_trajectory()
        assert len(q) == 400 and 0 < q.min() and q.max() < bl.Q_MAX

    def test_derivatives_of_a_parabola(self):
        t = np.arange(50) * 0.1
        vel, acc = bl.trajectory_derivatives(0.5 * t ** 2, 0.1)
        assert np.allclose(vel[1:-1], t[1:-1]) and np.allclose(acc[2:-2], 1.0)

    def test_excitation_dataset(self):
        ds = bl.excite_arm(CENTER, 300, seed=2)
        assert len(ds) == 300 and ds.dim == 1
        assert np.all(np.abs(np.diff(ds.commands[:, 0])) <= 0.1 + 1e-12)
        assert ds == bl.excite_arm(CENTER, 300, seed=2)

    def test_matched_cc_is_accurate(self):
        q = bl.angle_trajectory()
        gain = bl.tune_gain_i(q)
        assert gain in bl.GAIN_I_CANDIDATES
        assert bl.run_cc(CENTER, CENTER, q, gain).mean() < 0.02

    def test_rollouts_deterministic(self):
        q = bl.angle_trajectory(120)
        assert np.array_equal(bl.run_cc(CENTER, CENTER, q, 5.0, seed=3), bl.run_cc(CENTER, CENTER, q, 5.0, seed=3))
        a = bl.run_learned(CENTER, KinematicsOnlyController(dim=1), q, seed=3)
        b = bl.run_learned(CENTER, KinematicsOnlyController(dim=1), q, seed=3)
        assert np.array_equal(a, b) and len(a) == 119

    def test_grid_sweep_report(self, tmp_path):
        arms = bl.grid_arms()[10:15]
        rep = bl.grid_sweep(lambda: KinematicsOnlyController(dim=1), 5.0, bl.angle_trajectory(80), arms=arms)
        assert len(rep.rows) == 5
        assert rep.cc_aggregate == pytest.approx(np.mean([r.cc.mean_error for r in rep.rows]))
        rep.to_csv(tmp_path / "g.csv")
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines[0] == ",".join(bl.GRID_COLUMNS)
        assert len(lines) == 1 + 5 + 2
        assert lines[-2].startswith("mean,mean,") and lines[-1].startswith("spread,spread,")
        assert float(lines[-2].split(",")[4]) == pytest.approx(rep.hybrid_aggregate)

    def test_off_center_wins(self):
        m = lambda v: Metric(v, 0.0, v)  # noqa: E731
        rows = [bl.GridRow(e, nu, m(0.02), m(0.01 if e > 10 else 0.03))
                for e in bl.YOUNGS_GRID for nu in bl.POISSON_GRID]
        assert bl.GridReport(rows, 1.0).off_center_wins() == (10, 24)
