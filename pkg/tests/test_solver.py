import numpy as np
import pytest

from shootopt.dynamics import make_benchmark
from shootopt.errors import EvaluationError
from shootopt.ocp import (
    OptimalControlProblem,
    QuadraticStageCost,
    QuadraticTerminalCost,
    build_nlp,
)
from shootopt.solver import (
    SolveReport,
    SolveStatus,
    SolverOptions,
    check_derivatives,
    gradient,
    solve,
)
from shootopt.transcription import Scheme


class ToyNlp:
    """Minimal callback bundle; dual-generic closures, no fast paths."""

    def __init__(self, n, objective, eq=None, ineq=None, n_eq=0, n_ineq=0):
        self.n_vars = n
        self.objective = objective
        self.n_eq = n_eq
        self.n_ineq = n_ineq
        self.eq_residuals = eq if eq is not None else lambda z: np.zeros(0)
        self.ineq_residuals = ineq if ineq is not None else lambda z: np.zeros(0)


def benchmark_nlp(name, n=8, scheme=None, seed_terminal=False):
    sys = make_benchmark(name, {})
    n_x, n_u = 2 * sys.n_q, sys.n_u
    problem = OptimalControlProblem(
        system=sys,
        tf=0.8,
        N=n,
        stage_cost=QuadraticStageCost(
            Q=0.5 * np.eye(n_x), R=np.eye(n_u),
            x_ref=np.zeros(n_x), u_ref=np.zeros(n_u)),
        terminal_cost=QuadraticTerminalCost(Qf=np.eye(n_x), x_ref=np.zeros(n_x)),
        initial_state=np.zeros(n_x),
        terminal_state=np.full(n_x, 0.1) if seed_terminal else None,
        terminal_mask=np.ones(n_x, bool) if seed_terminal else None,
        control_lower=np.full(n_u, -10.0),
        control_upper=np.full(n_u, 10.0),
    )
    return build_nlp(problem, scheme or Scheme.second_rk4())


class TestGradient:
    def test_square(self):
        jac = gradient(lambda z: z[0] ** 2, np.array([3.0]))
        assert jac[0] == 6.0

    def test_vector_function(self):
        def f(z):
            from shootopt.duals import concat
            return concat([z[0] * z[1], z[1] ** 3])

        jac = gradient(f, np.array([2.0, 5.0]))
        np.testing.assert_allclose(jac, [[5.0, 2.0], [0.0, 75.0]])

    def test_block_defect_jacobian_constant(self):
        nlp = benchmark_nlp("block", n=4)
        rng = np.random.default_rng(0)
        j1 = nlp.eq_jacobian(rng.normal(size=nlp.n_vars))
        j2 = nlp.eq_jacobian(rng.normal(size=nlp.n_vars))
        np.testing.assert_array_equal(j1, j2)

    def test_cartpole_accel_jacobian_vs_central_differences(self):
        sys = make_benchmark("cartpole", {})
        rng = np.random.default_rng(1)
        point = rng.normal(size=5)

        def accel_flat(w):
            from shootopt.duals import concat
            out = sys.accel((w[0], w[1]), (w[2], w[3]), (w[4],))
            return concat(list(out))

        jac = gradient(accel_flat, point)
        eps = 1e-6
        fd = np.empty((2, 5))
        for i in range(5):
            hi, lo = point.copy(), point.copy()
            hi[i] += eps
            lo[i] -= eps
            fd[:, i] = (np.asarray(accel_flat(hi)) - np.asarray(accel_flat(lo))) / (2 * eps)
        np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-7)

    def test_generic_matches_structured_jacobians(self):
        nlp = benchmark_nlp("acrobot", n=5)
        rng = np.random.default_rng(2)
        z = rng.normal(size=nlp.n_vars)
        np.testing.assert_allclose(
            gradient(nlp.eq_residuals, z), nlp.eq_jacobian(z), rtol=1e-12, atol=1e-12
        )
        np.testing.assert_allclose(
            gradient(nlp.objective, z), nlp.objective_gradient(z),
            rtol=1e-12, atol=1e-12,
        )
        np.testing.assert_allclose(
            gradient(nlp.ineq_residuals, z), nlp.ineq_jacobian(z), atol=0
        )

    def test_jac_t_prod_matches_dense(self):
        nlp = benchmark_nlp("quadrotor2d", n=6)
        rng = np.random.default_rng(3)
        z = rng.normal(size=nlp.n_vars)
        w = rng.normal(size=nlp.n_eq)
        np.testing.assert_allclose(
            nlp.eq_jac_t_prod(z, w), nlp.eq_jacobian(z).T @ w, rtol=1e-12, atol=1e-12
        )
        wg = rng.normal(size=nlp.n_ineq)
        np.testing.assert_allclose(
            nlp.ineq_jac_t_prod(wg), nlp.ineq_jacobian().T @ wg, atol=0
        )


class TestCheckDerivatives:
    @pytest.mark.parametrize("name", ["block", "cartpole", "acrobot",
                                      "quadrotor1d", "quadrotor2d"])
    def test_benchmark_nlps(self, name):
        nlp = benchmark_nlp(name, n=6, seed_terminal=True)
        rng = np.random.default_rng(4)
        assert check_derivatives(nlp, rng.normal(size=nlp.n_vars) * 0.5) <= 1e-5

    def test_linear_dynamics_near_exact(self):
        nlp = benchmark_nlp("block", n=6)
        rng = np.random.default_rng(5)
        assert check_derivatives(nlp, rng.normal(size=nlp.n_vars)) <= 1e-9

    def test_zero_point_block(self):
        nlp = benchmark_nlp("block", n=6)
        assert check_derivatives(nlp, np.zeros(nlp.n_vars)) <= 1e-9


class TestSolve:
    def test_unconstrained_quadratic(self):
        target = np.array([1.0, -2.0, 0.5])

        def obj(z):
            d0 = z[0] - target[0]
            d1 = z[1] - target[1]
            d2 = z[2] - target[2]
            return d0 * d0 + d1 * d1 + d2 * d2

        nlp = ToyNlp(3, obj)
        z, report = solve(nlp, SolverOptions(), np.zeros(3))
        assert report.status == SolveStatus.OPTIMAL
        np.testing.assert_allclose(z, target, atol=1e-6)

    def test_equality_toy(self):
        # min z0^2 + z1^2 s.t. z0 + z1 = 1  ->  (0.5, 0.5)
        from shootopt.duals import concat

        nlp = ToyNlp(
            2,
            lambda z: z[0] * z[0] + z[1] * z[1],
            eq=lambda z: concat([z[0] + z[1] - 1.0]),
            n_eq=1,
        )
        z, report = solve(nlp, SolverOptions(), np.zeros(2))
        assert report.status == SolveStatus.OPTIMAL
        np.testing.assert_allclose(z, [0.5, 0.5], atol=1e-6)

    def test_box_toy(self):
        # min (z-2)^2 s.t. z <= 1  ->  active bound at 1
        from shootopt.duals import concat

        nlp = ToyNlp(
            1,
            lambda z: (z[0] - 2.0) * (z[0] - 2.0),
            ineq=lambda z: concat([z[0] - 1.0]),
            n_ineq=1,
        )
        z, report = solve(nlp, SolverOptions(), np.zeros(1))
        assert report.status == SolveStatus.OPTIMAL
        assert z[0] == pytest.approx(1.0, abs=1e-6)

    def test_block_boundary_value_solve(self):
        nlp = benchmark_nlp("block", n=10, seed_terminal=True)
        z, report = solve(nlp, SolverOptions(), np.zeros(nlp.n_vars))
        assert report.status == SolveStatus.OPTIMAL
        assert report.final_feasibility <= 1e-8
        traj = nlp.unpack(z)
        np.testing.assert_allclose(
            np.hstack([traj.q[-1], traj.qdot[-1]]), [0.1, 0.1], atol=1e-7
        )

    def test_determinism(self):
        nlp = benchmark_nlp("cartpole", n=6, seed_terminal=True)
        z1, r1 = solve(nlp, SolverOptions(), np.zeros(nlp.n_vars))
        z2, r2 = solve(nlp, SolverOptions(), np.zeros(nlp.n_vars))
        np.testing.assert_array_equal(z1, z2)
        assert (r1.outer_iters, r1.inner_iters) == (r2.outer_iters, r2.inner_iters)
        assert r1.final_feasibility == r2.final_feasibility

    def test_monotone_outer_feasibility_or_penalty_growth(self):
        opts = SolverOptions()
        nlp = benchmark_nlp("cartpole", n=6, seed_terminal=True)
        _, report = solve(nlp, opts, np.zeros(nlp.n_vars))
        feas = report.feasibility_history
        rho = report.penalty_history
        # violation non-increasing (up to sub-tolerance noise) unless the
        # penalty grew in response
        for k in range(1, len(feas)):
            ceiling = max(feas[k - 1], opts.feas_tol) * (1 + 1e-12)
            assert feas[k] <= ceiling or rho[k] > rho[k - 1]

    @pytest.mark.filterwarnings("ignore:invalid value")
    def test_evaluation_error_status(self):
        def obj(z):
            from shootopt.duals import sqrt
            return sqrt(z[0] - 10.0)  # NaN near the zero start

        nlp = ToyNlp(1, obj)
        _, report = solve(nlp, SolverOptions(max_outer=2), np.zeros(1))
        assert report.status == SolveStatus.EVALUATION_ERROR

    def test_max_iterations_status(self):
        from shootopt.duals import concat

        nlp = ToyNlp(
            2,
            lambda z: z[0] * z[0] + z[1] * z[1],
            eq=lambda z: concat([z[0] + z[1] - 1.0]),
            n_eq=1,
        )
        _, report = solve(nlp, SolverOptions(max_outer=1, max_inner=2), np.zeros(2))
        assert report.status in (SolveStatus.MAX_ITERATIONS,
                                 SolveStatus.LINE_SEARCH_FAILURE)

    def test_options_validation(self):
        with pytest.raises(ValueError):
            SolverOptions(feas_tol=-1.0)
        with pytest.raises(ValueError):
            SolverOptions(penalty_growth=1.0)
