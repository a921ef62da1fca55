import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shootopt.dynamics import (
    FirstOrderSystem,
    HighOrderSystem,
    SecondOrderSystem,
    augment,
    make_benchmark,
)
from shootopt.errors import ConfigError, DimensionMismatch, EvaluationError
from shootopt.transcription import (
    KnotTrajectory,
    Scheme,
    SchemeKind,
    defect,
    rollout,
    step_euler_order_n,
    step_first_euler,
    step_first_rk4,
    step_second_euler,
    step_second_rk4,
)

BLOCK = make_benchmark("block", {})
BLOCK_FIRST = augment(BLOCK)


def oscillator():
    return SecondOrderSystem("osc", 1, 1, lambda q, qd, u: (-q[0],))


def damped():
    # qddot = -qdot
    return SecondOrderSystem("damped", 1, 1, lambda q, qd, u: (-qd[0],))


def analytic_block(q0, v0, u, h):
    """Exact one-step flow of the double integrator under a held input."""
    return q0 + v0 * h + 0.5 * u * h * h, v0 + u * h


class TestSchemeTableaus:
    def test_first_euler_tableau(self):
        s = Scheme.first_euler()
        assert s.stages == 1
        assert s.tableau_b.tolist() == [1.0]

    def test_first_rk4_tableau(self):
        s = Scheme.first_rk4()
        assert s.stages == 4
        np.testing.assert_array_equal(s.tableau_b, [1 / 6, 1 / 3, 1 / 3, 1 / 6])
        a = s.tableau_a
        assert a[1, 0] == 0.5 and a[2, 1] == 0.5 and a[3, 2] == 1.0
        assert np.count_nonzero(a) == 3

    def test_from_name_round_trip(self):
        for name in ["1st-euler", "2nd-euler", "1st-rk4", "2nd-rk4"]:
            assert Scheme.from_name(name).label == name
        with pytest.raises(ConfigError):
            Scheme.from_name("3rd-euler")


class TestFirstEuler:
    def test_block_config_ignores_control(self):
        out = step_first_euler(BLOCK_FIRST, [0.0, 0.0], [1.0], 0.1)
        np.testing.assert_array_equal(out, [0.0, 0.1])
        # the configuration component is bitwise independent of u
        for u in [-7.0, 0.0, 3.5]:
            assert step_first_euler(BLOCK_FIRST, [0.0, 0.0], [u], 0.1)[0] == 0.0

    def test_fixed_point(self):
        osc_first = augment(oscillator())
        out = step_first_euler(osc_first, [0.0, 0.0], [0.0], 0.3)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_harmonic_oscillator(self):
        osc_first = augment(oscillator())
        out = step_first_euler(osc_first, [1.0, 0.0], [0.0], 0.1)
        np.testing.assert_allclose(out, [1.0, -0.1], rtol=0, atol=0)

    def test_requires_positive_h(self):
        with pytest.raises(ConfigError):
            step_first_euler(BLOCK_FIRST, [0.0, 0.0], [1.0], 0.0)


class TestSecondEuler:
    def test_block_matches_analytic(self):
        q1, v1 = step_second_euler(BLOCK, [0.0], [0.0], [1.0], 0.1)
        assert q1[0] == pytest.approx(0.005, abs=1e-18)
        assert v1[0] == pytest.approx(0.1, abs=1e-18)

    @given(
        q0=st.floats(-10, 10),
        v0=st.floats(-10, 10),
        u=st.floats(-10, 10),
        h=st.floats(1e-3, 1.0),
    )
    @settings(max_examples=60, deadline=None, derandomize=True)
    def test_block_exact_for_any_inputs(self, q0, v0, u, h):
        q1, v1 = step_second_euler(BLOCK, [q0], [v0], [u], h)
        qe, ve = analytic_block(q0, v0, u, h)
        assert q1[0] == pytest.approx(qe, rel=1e-15, abs=1e-15)
        assert v1[0] == pytest.approx(ve, rel=1e-15, abs=1e-15)

    def test_harmonic_oscillator_hand_values(self):
        # K1 = 0.1*(-1) = -0.1 ; q1 = 1 + 0 + 0.05*(-0.1) = 0.995 ; v1 = -0.1
        q1, v1 = step_second_euler(oscillator(), [1.0], [0.0], [0.0], 0.1)
        assert q1[0] == pytest.approx(0.995, abs=1e-16)
        assert v1[0] == pytest.approx(-0.1, abs=1e-16)
        # local config error vs cos(0.1) is O(h^3)
        assert abs(q1[0] - math.cos(0.1)) < 2e-5


class TestFirstRK4:
    def test_exponential_growth_taylor4(self):
        sys = FirstOrderSystem("exp", 1, 1, lambda x, u: (x[0],))
        out = step_first_rk4(sys, [1.0], [0.0], 0.1)
        expected = sum(0.1**i / math.factorial(i) for i in range(5))
        assert out[0] == pytest.approx(expected, rel=1e-15)

    def test_fixed_point(self):
        osc_first = augment(oscillator())
        out = step_first_rk4(osc_first, [0.0, 0.0], [0.0], 0.2)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_block_exact(self):
        # four-stage expansion is exact on the double integrator
        out = step_first_rk4(BLOCK_FIRST, [0.0, 0.0], [1.0], 0.1)
        np.testing.assert_allclose(out, [0.005, 0.1], rtol=1e-15)


class TestSecondRK4:
    def test_block_stage_collapse(self):
        # constant accel: all stages equal, config weights sum to 1/2
        q1, v1 = step_second_rk4(BLOCK, [0.0], [0.0], [1.0], 0.1)
        assert q1[0] == pytest.approx(0.005, rel=1e-14)
        assert v1[0] == pytest.approx(0.1, rel=1e-15)

    def test_damped_velocity_series(self):
        # velocity-only linear dynamics reproduce the degree-4 Taylor sum
        q1, v1 = step_second_rk4(damped(), [0.0], [1.0], [0.0], 0.1)
        expected = sum((-0.1) ** i / math.factorial(i) for i in range(5))
        assert v1[0] == pytest.approx(expected, rel=1e-15)
        assert abs(v1[0] - math.exp(-0.1)) < 1e-7

    def test_config_weight_identity(self):
        # for any constant-accel system q+ - q - h qd = h*K/2
        rng = np.random.default_rng(0)
        for _ in range(10):
            q0, v0, u, h = rng.normal(), rng.normal(), rng.normal(), rng.uniform(0.01, 1)
            q1, _ = step_second_rk4(BLOCK, [q0], [v0], [u], h)
            k = h * u
            assert q1[0] - q0 - h * v0 == pytest.approx(h * k / 2, rel=1e-13, abs=1e-16)


class TestEulerOrderN:
    def test_order2_specializes_to_second_euler(self):
        high = HighOrderSystem(
            "block2", 2, 1, 1, lambda d, u: (u[0],)
        )
        rng = np.random.default_rng(5)
        for _ in range(20):
            q0, v0, u, h = rng.normal(), rng.normal(), rng.normal(), rng.uniform(0.01, 1)
            (qn,), (vn,) = step_euler_order_n(high, [[q0], [v0]], [u], h)
            qe, ve = step_second_euler(BLOCK, [q0], [v0], [u], h)
            # same formula, different association order: agree to rounding
            # of the largest intermediate term
            scale = abs(q0) + h * abs(v0) + 0.5 * h * h * abs(u)
            assert abs(qn - qe[0]) <= 2 * np.finfo(float).eps * scale
            assert vn == ve[0]

    def test_order1_specializes_to_first_euler(self):
        high = HighOrderSystem("decay", 1, 1, 1, lambda d, u: (-d[0][0] + u[0],))
        first = FirstOrderSystem("decay", 1, 1, lambda x, u: (-x[0] + u[0],))
        (qn,) = step_euler_order_n(high, [[2.0]], [0.5], 0.1)
        out = step_first_euler(first, [2.0], [0.5], 0.1)
        assert qn[0] == pytest.approx(out[0], rel=4e-16)

    def test_triple_integrator(self):
        high = HighOrderSystem("triple", 3, 1, 1, lambda d, u: (u[0],))
        levels = step_euler_order_n(high, [[0.0], [0.0], [0.0]], [6.0], 1.0)
        assert [float(lv[0]) for lv in levels] == pytest.approx([1.0, 3.0, 6.0])

    def test_wrong_level_count(self):
        high = HighOrderSystem("triple", 3, 1, 1, lambda d, u: (u[0],))
        with pytest.raises(DimensionMismatch):
            step_euler_order_n(high, [[0.0], [0.0]], [6.0], 1.0)


class TestRollout:
    def test_times_grid(self):
        traj = rollout(BLOCK, Scheme.second_euler(), [0.0, 0.0], np.ones((5, 1)), 0.2)
        np.testing.assert_allclose(traj.times, 0.2 * np.arange(6))
        assert traj.n_intervals == 5
        assert traj.q.shape == (6, 1)
        assert traj.qdot.shape == (6, 1)

    @pytest.mark.parametrize(
        "scheme",
        [Scheme.second_euler(), Scheme.second_rk4()],
    )
    def test_exact_on_block_randomized(self, scheme):
        rng = np.random.default_rng(42)
        for _ in range(30):
            n = rng.integers(1, 12)
            h = rng.uniform(0.01, 0.5)
            q0, v0 = rng.normal(size=2)
            us = rng.normal(size=(n, 1))
            traj = rollout(BLOCK, scheme, [q0, v0], us, h)
            q, v = q0, v0
            for k in range(n):
                q, v = analytic_block(q, v, us[k, 0], h)
                assert traj.q[k + 1, 0] == pytest.approx(q, rel=1e-12, abs=1e-13)
                assert traj.qdot[k + 1, 0] == pytest.approx(v, rel=1e-12, abs=1e-13)

    def test_first_euler_delay(self):
        # configuration after one step is bitwise independent of u0
        t1 = rollout(BLOCK, Scheme.first_euler(), [0.3, 0.7], [[5.0]], 0.1)
        t2 = rollout(BLOCK, Scheme.first_euler(), [0.3, 0.7], [[-5.0]], 0.1)
        assert t1.q[1, 0] == t2.q[1, 0]

    def test_order_n_scheme_on_high_order_system(self):
        high = HighOrderSystem("triple", 3, 1, 1, lambda d, u: (u[0],))
        traj = rollout(high, Scheme.euler_order_n(), [0.0, 0.0, 0.0], [[6.0]], 1.0)
        assert traj.q[1, 0] == pytest.approx(1.0)
        assert traj.derivs[1, 0, 0] == pytest.approx(3.0)
        assert traj.derivs[1, 1, 0] == pytest.approx(6.0)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_failure_annotated_with_step_index(self):
        # blows past the float range a few steps in
        flaky = SecondOrderSystem(
            "flaky", 1, 1, lambda q, qd, u: (q[0] ** 5 * 1e30,)
        )
        with pytest.raises(EvaluationError) as err:
            rollout(flaky, Scheme.second_euler(), [2.0, 0.0], np.zeros((8, 1)), 0.1)
        assert "step" in str(err.value)

    def test_second_scheme_rejects_high_order(self):
        high = HighOrderSystem("triple", 3, 1, 1, lambda d, u: (u[0],))
        with pytest.raises(ConfigError):
            rollout(high, Scheme.second_euler(), [0.0, 0.0, 0.0], [[1.0]], 0.1)


class TestDefect:
    @pytest.mark.parametrize(
        "scheme",
        [
            Scheme.first_euler(),
            Scheme.second_euler(),
            Scheme.first_rk4(),
            Scheme.second_rk4(),
        ],
    )
    def test_consistent_pair_is_zero(self, scheme):
        rng = np.random.default_rng(1)
        x0 = rng.normal(size=2)
        u = rng.normal(size=1)
        h = 0.07
        traj = rollout(BLOCK, scheme, x0, [u], h)
        res = defect(BLOCK, scheme, np.r_[traj.q[0], traj.qdot[0]],
                     np.r_[traj.q[1], traj.qdot[1]], u, h)
        np.testing.assert_array_equal(res, np.zeros(2))

    def test_block_analytic_pair_second_euler_zero(self):
        q0, v0, u, h = 0.4, -0.3, 1.7, 0.2
        q1, v1 = analytic_block(q0, v0, u, h)
        res = defect(BLOCK, Scheme.second_euler(), [q0, v0], [q1, v1], [u], h)
        np.testing.assert_allclose(res, 0.0, atol=1e-15)

    def test_block_analytic_pair_first_euler_quantifies_delay(self):
        q0, v0, u, h = 0.4, -0.3, 1.7, 0.2
        q1, v1 = analytic_block(q0, v0, u, h)
        res = defect(BLOCK, Scheme.first_euler(), [q0, v0], [q1, v1], [u], h)
        assert res[0] == pytest.approx(-0.5 * u * h * h, rel=1e-14)
        assert res[1] == pytest.approx(0.0, abs=1e-16)

    def test_order_n_defect_on_high_order_system(self):
        high = HighOrderSystem("triple", 3, 1, 1, lambda d, u: (u[0],))
        traj = rollout(high, Scheme.euler_order_n(), [0.1, -0.2, 0.3], [[2.0]], 0.5)
        knot0 = np.r_[traj.q[0], traj.derivs[0].ravel()]
        knot1 = np.r_[traj.q[1], traj.derivs[1].ravel()]
        res = defect(high, Scheme.euler_order_n(), knot0, knot1, [2.0], 0.5)
        np.testing.assert_array_equal(res, np.zeros(3))


class TestKnotTrajectory:
    def test_rejects_nonuniform_grid(self):
        with pytest.raises(DimensionMismatch):
            KnotTrajectory(
                times=np.array([0.0, 0.1, 0.25]),
                q=np.zeros((3, 1)),
                derivs=np.zeros((3, 1, 1)),
                controls=np.zeros((2, 1)),
            )

    def test_rejects_decreasing_times(self):
        with pytest.raises(DimensionMismatch):
            KnotTrajectory(
                times=np.array([0.0, -0.1, -0.2]),
                q=np.zeros((3, 1)),
                derivs=np.zeros((3, 1, 1)),
                controls=np.zeros((2, 1)),
            )

    def test_shape_validation(self):
        with pytest.raises(DimensionMismatch):
            KnotTrajectory(
                times=np.array([0.0, 0.1]),
                q=np.zeros((2, 1)),
                derivs=np.zeros((2, 1, 1)),
                controls=np.zeros((2, 1)),
            )
