import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from softhybrid.core import WORKSPACE_LENGTH
from softhybrid.plant import (BACK, FRONT, LEFT, RIGHT, PlantParams, SimulatedRobot, effective_delay,
                              equilibrium, init_state, nominal_plant, open_loop, open_loop_divergence,
                              perturb_unit, physical_delay, reference_sequence, rotate_configuration, step)

NOM = nominal_plant()
QUIET = replace(NOM, noise_std=0.0)
QUARTER = np.array([[0, -1], [1, 0]])

commands = st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=40)


def settle(params, command, steps=60):
    return open_loop(replace(params, noise_std=0.0), np.tile(command, (steps, 1)))[-1]


class TestNominal:
    def test_seed_only_changes_seed(self):
        assert replace(nominal_plant(5), seed=0) == nominal_plant(0)

    def test_rest_pose_is_stable(self):
        p = open_loop(NOM, np.zeros((100, 2)), rng_seed=3)
        rms = math.sqrt(np.mean(np.sum(p ** 2, axis=1)))
        assert rms <= 3 * NOM.noise_std

    def test_full_command_reaches_half_diagonal(self):
        reach = np.linalg.norm(settle(NOM, [1.0, 1.0]))
        assert reach == pytest.approx(WORKSPACE_LENGTH / math.sqrt(2), rel=0.1)

    def test_workspace_spans_the_square(self):
        span_x = settle(NOM, [1, 0])[0] - settle(NOM, [-1, 0])[0]
        span_y = settle(NOM, [0, 1])[1] - settle(NOM, [0, -1])[1]
        # tanh compression leaves the corners of a 60.94 mm square unreachable
        assert span_x == pytest.approx(WORKSPACE_LENGTH, rel=0.05)
        assert span_y == pytest.approx(WORKSPACE_LENGTH, rel=0.05)

    def test_left_and_top_are_harder_to_reach(self):
        ds = open_loop(NOM, reference_sequence(20000, seed=11))
        assert ds[:, 0].max() > -ds[:, 0].min()
        assert -ds[:, 1].min() > ds[:, 1].max()
        assert NOM.asymmetry[LEFT] < NOM.asymmetry[RIGHT] and NOM.asymmetry[FRONT] < NOM.asymmetry[BACK]


class TestRotation:
    @pytest.mark.parametrize("reregister", [False, True])
    def test_four_quarter_turns_compose_to_identity(self, reregister):
        p = NOM
        for _ in range(4):
            p = rotate_configuration(p, 1, reregister)
        assert p == NOM

    def test_half_turn_flips_both_channels(self):
        p = rotate_configuration(NOM, 2)
        assert p.channel_map == ((-1, 0), (0, -1))
        assert p.asymmetry[LEFT] == NOM.asymmetry[RIGHT] and p.asymmetry[FRONT] == NOM.asymmetry[BACK]
        assert (p.gain_x, p.gain_y) == (NOM.gain_x, NOM.gain_y)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_rotated_unit_traces_the_rotated_path(self, k):
        s = reference_sequence(300)
        p0 = open_loop(QUIET, s)
        pk = open_loop(rotate_configuration(QUIET, k), s)
        assert np.allclose(pk, p0 @ np.linalg.matrix_power(QUARTER, k).T, atol=1e-12)

    def test_half_turn_equals_negated_outputs(self):
        s = reference_sequence(300)
        assert np.allclose(open_loop(rotate_configuration(QUIET, 2), s), -open_loop(QUIET, s), atol=1e-12)

    @pytest.mark.parametrize("k", [0, 4, -1])
    def test_out_of_range_rejected(self, k):
        with pytest.raises(ValueError):
            rotate_configuration(NOM, k)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_reregistered_units_differ_from_nominal(self, k):
        d = open_loop_divergence(NOM, rotate_configuration(NOM, k, reregister=True))
        assert 0.5 < d < 5.0


class TestPerturbation:
    def test_zero_severity_is_identity(self):
        assert perturb_unit(NOM, 0.0, 9) is NOM

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_divergence_matches_unit_spread(self, seed):
        assert open_loop_divergence(NOM, perturb_unit(NOM, 0.15, seed)) == pytest.approx(5.2, abs=2.0)

    def test_seeds_give_different_units(self):
        assert not np.array_equal(perturb_unit(NOM, 0.15, 1).vector(), perturb_unit(NOM, 0.15, 2).vector())

    def test_deterministic(self):
        assert perturb_unit(NOM, 0.15, 4) == perturb_unit(NOM, 0.15, 4)

    @pytest.mark.parametrize("sev", [-0.1, 0.6])
    def test_out_of_range_rejected(self, sev):
        with pytest.raises(ValueError):
            perturb_unit(NOM, sev, 1)

    @given(st.floats(0.0, 0.5), st.integers(0, 10_000))
    def test_factors_stay_in_band(self, sev, seed):
        p = perturb_unit(NOM, sev, seed)
        assert abs(p.gain_x / NOM.gain_x - 1) <= sev + 1e-12
        assert abs(p.time_constant / NOM.time_constant - 1) <= sev + 1e-12
        assert all(0.5 <= a <= 1.5 for a in p.asymmetry)


class TestStep:
    def test_zero_command_returns_to_rest(self):
        state = init_state(QUIET)
        state.position = np.array([12.0, -7.0])
        for _ in range(100):
            p = step(state, QUIET, [0.0, 0.0])
        assert np.linalg.norm(p) < 1e-9

    def test_lag_contracts_at_the_time_constant_rate(self):
        target = equilibrium(QUIET, np.array([0.4, -0.3]))
        p = open_loop(QUIET, np.tile([0.4, -0.3], (12, 1)))
        gaps = np.linalg.norm(p - target, axis=1)
        ratios = gaps[2:10] / gaps[1:9]
        assert np.allclose(ratios, math.exp(-0.3 / QUIET.time_constant), rtol=1e-9)

    def test_commands_are_clamped(self):
        a = open_loop(QUIET, np.tile([5.0, -5.0], (20, 1)))
        b = open_loop(QUIET, np.tile([1.0, -1.0], (20, 1)))
        assert np.array_equal(a, b)

    def test_deterministic_given_rng_state(self):
        s = reference_sequence(200)
        assert np.array_equal(open_loop(NOM, s, rng_seed=4), open_loop(NOM, s, rng_seed=4))

    def test_noise_level(self):
        p = open_loop(NOM, np.zeros((4000, 2)), rng_seed=1)
        assert p.std(axis=0) == pytest.approx([NOM.noise_std] * 2, rel=0.05)

    @pytest.mark.parametrize("dt,steps", [(0.3, 1), (0.25, 1), (0.4, 1), (0.1, 2), (0.05, 4)])
    def test_dead_time_is_physical(self, dt, steps):
        m, r = effective_delay(NOM, dt)
        assert m * dt + r == pytest.approx(physical_delay(NOM), abs=1e-12)
        assert 0 <= r < dt
        # the first returned position that moves is the one ``m`` calls after the command
        s = np.zeros((10, 2))
        s[3:] = 0.5
        p = open_loop(QUIET, s, dt)
        moved = np.flatnonzero(np.linalg.norm(p, axis=1) > 0)
        assert moved[0] == 3 + m
        assert m + 1 == steps

    def test_whole_period_delay(self):
        params = replace(QUIET, delay_steps=2, dead_time=0.0)
        state = init_state(params)
        assert state.delay == 2 and len(state.queue) == 2
        s = np.zeros((10, 2))
        s[3:] = 0.5
        p = open_loop(params, s)
        assert np.flatnonzero(np.linalg.norm(p, axis=1) > 0)[0] == 5
        # the queue length never changes
        for c in s:
            step(state, params, c)
            assert len(state.queue) == 2

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            SimulatedRobot(NOM, dt=0.0)

    @given(commands)
    def test_bounded(self, seq):
        params = replace(QUIET, twist=0.0)
        state = init_state(params)
        for c in seq:
            step(state, params, c)
            assert np.all(np.abs(state.position) <= params.bound() + 1e-9)

    @given(commands, st.floats(0.0, 0.5), st.integers(0, 50))
    def test_bounded_for_perturbed_units(self, seq, sev, seed):
        params = replace(perturb_unit(QUIET, sev, seed), noise_std=0.0)
        state = init_state(params)
        for c in seq:
            step(state, params, c)
            assert np.all(np.abs(state.position) <= params.bound() + 1e-9)

    @given(st.floats(0, 2 * math.pi), st.floats(0.01, 0.1))
    def test_small_commands_push_the_commanded_way(self, angle, mag):
        u = mag * np.array([math.cos(angle), math.sin(angle)])
        assert np.dot(settle(QUIET, u, 3), u) > 0


class TestParams:
    def test_json_round_trip(self, tmp_path):
        p = perturb_unit(rotate_configuration(NOM, 1), 0.2, 5)
        p.save(tmp_path / "p.json")
        assert PlantParams.load(tmp_path / "p.json") == p

    def test_json_version_checked(self):
        doc = NOM.to_json().replace('"format_version": 1', '"format_version": 9')
        with pytest.raises(ValueError):
            PlantParams.from_json(doc)

    @pytest.mark.parametrize("field,value", [("gain_x", 0.0), ("delay_steps", 4), ("noise_std", -1.0),
                                             ("asymmetry", (1.0, 1.0, 1.0, 2.0)), ("dead_time", -0.1),
                                             ("channel_map", ((1, 1), (0, 1)))])
    def test_invalid_rejected(self, field, value):
        with pytest.raises(ValueError):
            replace(NOM, **{field: value})
