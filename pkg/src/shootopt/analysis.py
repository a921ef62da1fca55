"""Trajectory reconstruction, transcription-error metrics, error bounds,
and convergence studies.

The accuracy pipeline mirrors the experimental protocol used throughout
the package: reconstruct a continuous configuration trajectory from the
knot solution with per-interval cubic Hermite polynomials, compare it with
a reference trajectory, and accumulate the per-interval error

    eta_k = integral over [t_k, t_k+1] of | sum_i eps_i(tau) | dtau

by Romberg quadrature, where ``eps(t)`` is the componentwise configuration
error.  Note the absolute value sits outside the component sum, so errors
of opposite sign across coordinates can cancel; ``component_abs=True``
switches to the per-component variant ``integral of sum_i |eps_i|``.

Error-bound calculators for the velocity-aware Euler and RK4 steps are
provided as closed forms in (L, alpha|beta, tf, h); convergence studies
measure log-log error slopes in two modes: against an analytic flow
(integrator mode) or against a high-resolution reference solve (optimal
control mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import SecondOrderSystem
from .errors import ConfigError, DimensionMismatch, EvaluationError
from .ocp import OptimalControlProblem, build_nlp
from .transcription import KnotTrajectory, Scheme, rollout

__all__ = [
    "SplineTrajectory",
    "ErrorReport",
    "reconstruct",
    "config_error",
    "romberg",
    "interval_error",
    "total_error",
    "euler_bound",
    "rk4_bound",
    "ConvergenceResult",
    "convergence_study",
    "damped_velocity_system",
    "damped_velocity_flow",
]


@dataclass(frozen=True)
class SplineTrajectory:
    """Per-interval cubic Hermite interpolant of (q, qdot) knot data.

    Interpolates the knots exactly and is C1 across interval boundaries by
    construction.  ``coeffs`` has shape (N, 4, n_q): polynomial
    coefficients in the local offset ``s = t - t_k``, constant term first.
    """

    times: np.ndarray
    coeffs: np.ndarray

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def tf(self) -> float:
        return float(self.times[-1])

    @property
    def n_q(self) -> int:
        return self.coeffs.shape[2]

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        tol = 1e-9 * max(1.0, abs(self.tf))
        if np.any(t < self.t0 - tol) or np.any(t > self.tf + tol):
            raise DimensionMismatch(
                f"evaluation time outside [{self.t0}, {self.tf}]"
            )
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1,
                    0, len(self.times) - 2)
        return k, t - self.times[k]

    def eval(self, t) -> np.ndarray:
        """Configuration at time(s) t; shape (n_q,) or (len(t), n_q)."""
        k, s = self._locate(t)
        c = self.coeffs[k]
        s = np.asarray(s)[..., None]
        return c[..., 0, :] + s * (c[..., 1, :] + s * (c[..., 2, :] + s * c[..., 3, :]))

    def eval_deriv(self, t) -> np.ndarray:
        k, s = self._locate(t)
        c = self.coeffs[k]
        s = np.asarray(s)[..., None]
        return c[..., 1, :] + s * (2.0 * c[..., 2, :] + s * (3.0 * c[..., 3, :]))


@dataclass(frozen=True)
class ErrorReport:
    """Per-interval accumulated configuration error and its total."""

    eta: np.ndarray
    eta_total: float
    reference_N: int

    def __post_init__(self):
        if np.any(np.asarray(self.eta) < 0):
            raise ValueError("interval errors must be nonnegative")


def reconstruct(knots: KnotTrajectory) -> SplineTrajectory:
    """Cubic Hermite spline through the (q, qdot) knots of a trajectory."""
    if len(knots.times) < 2:
        raise DimensionMismatch("need at least two knots to reconstruct")
    q = np.asarray(knots.q, dtype=float)
    v = np.asarray(knots.qdot, dtype=float)
    h = np.diff(knots.times)[:, None]
    q0, q1 = q[:-1], q[1:]
    v0, v1 = v[:-1], v[1:]
    dq = q1 - q0 - v0 * h
    dv = v1 - v0
    c3 = (dv * h - 2.0 * dq) / h**3
    c2 = (3.0 * dq - dv * h) / h**2
    coeffs = np.stack([q0, v0, c2, c3], axis=1)
    return SplineTrajectory(times=np.asarray(knots.times, float), coeffs=coeffs)


def config_error(candidate: SplineTrajectory, reference: SplineTrajectory, t):
    """Componentwise configuration gap candidate(t) - reference(t)."""
    if candidate.n_q != reference.n_q:
        raise DimensionMismatch("trajectories have different configuration sizes")
    return candidate.eval(t) - reference.eval(t)


def romberg(f: Callable, a: float, b: float, rel_tol: float = 1e-10,
            max_levels: int = 12) -> float:
    """Romberg integration of ``f`` over [a, b].

    ``f`` must accept a vector of sample points.  Refinement stops when
    successive diagonal tableau entries agree to ``rel_tol`` (relative,
    with exact zero agreement accepted) or ``max_levels`` is reached.
    """
    if not a < b:
        raise ConfigError(f"need a < b, got [{a}, {b}]")
    r = np.empty((max_levels + 1, max_levels + 1))
    ends = np.asarray(f(np.array([a, b])), dtype=float)
    if not np.all(np.isfinite(ends)):
        raise EvaluationError("non-finite integrand sample", point=(a, b))
    h = b - a
    r[0, 0] = 0.5 * h * float(ends[0] + ends[1])
    n = 1
    for i in range(1, max_levels + 1):
        n *= 2
        h *= 0.5
        xs = a + (2.0 * np.arange(1, n // 2 + 1) - 1.0) * h
        fs = np.asarray(f(xs), dtype=float)
        if not np.all(np.isfinite(fs)):
            raise EvaluationError("non-finite integrand sample", point=xs)
        r[i, 0] = 0.5 * r[i - 1, 0] + h * float(np.sum(fs))
        for j in range(1, i + 1):
            r[i, j] = r[i, j - 1] + (r[i, j - 1] - r[i - 1, j - 1]) / (4.0**j - 1.0)
        diff = abs(r[i, i] - r[i - 1, i - 1])
        if diff <= rel_tol * max(abs(r[i, i]), 1e-300):
            return float(r[i, i])
    return float(r[max_levels, max_levels])


def interval_error(candidate: SplineTrajectory, reference: SplineTrajectory,
                   k: int, rel_tol: float = 1e-10,
                   component_abs: bool = False) -> float:
    """Accumulated configuration error over the candidate's interval k.

    Integrand is |sum_i eps_i(t)| (components summed before the absolute
    value); set ``component_abs`` for the sum of per-component absolute
    errors instead.
    """
    n = len(candidate.times) - 1
    if not 0 <= k < n:
        raise ConfigError(f"interval index {k} outside [0, {n})")
    a, b = float(candidate.times[k]), float(candidate.times[k + 1])

    if component_abs:
        def integrand(ts):
            return np.sum(np.abs(config_error(candidate, reference, ts)), axis=-1)
    else:
        def integrand(ts):
            return np.abs(np.sum(config_error(candidate, reference, ts), axis=-1))

    return romberg(integrand, a, b, rel_tol=rel_tol)


def total_error(candidate: SplineTrajectory, reference: SplineTrajectory,
                reference_N: int = 0, rel_tol: float = 1e-10,
                component_abs: bool = False) -> ErrorReport:
    """Sum of :func:`interval_error` over the candidate's intervals."""
    n = len(candidate.times) - 1
    eta = np.array([
        interval_error(candidate, reference, k, rel_tol=rel_tol,
                       component_abs=component_abs)
        for k in range(n)
    ])
    return ErrorReport(eta=eta, eta_total=float(np.sum(eta)),
                       reference_N=reference_N)


def euler_bound(L: float, alpha: float, tf: float, h: float) -> float:
    """Global configuration error bound of the velocity-aware Euler step,
    ``alpha*h^3 / (6hL + 3h^2L^2) * (e^(tf*L) - 1)``."""
    _check_bound_args(L, tf, h)
    if alpha < 0:
        raise ConfigError("alpha must be nonnegative")
    return alpha * h**3 / (6.0 * h * L + 3.0 * h**2 * L**2) * math.expm1(tf * L)


def rk4_bound(L: float, beta: float, tf: float, h: float) -> float:
    """Global configuration error bound of the velocity-aware RK4 step,
    ``beta*h^6 / (720 * sum_{i=1..5} h^i L^i / i!) * (e^(tf*L) - 1)``."""
    _check_bound_args(L, tf, h)
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    denom = 720.0 * sum((h * L) ** i / math.factorial(i) for i in range(1, 6))
    return beta * h**6 / denom * math.expm1(tf * L)


def _check_bound_args(L, tf, h):
    if not (L > 0 and tf > 0 and h > 0):
        raise ConfigError("L, tf, h must all be positive")


# ---------------------------------------------------------------------------
# analytic test system for integrator studies
# ---------------------------------------------------------------------------


def damped_velocity_system(rate: float = 1.0, drive: float = 0.0) -> SecondOrderSystem:
    """Test system ``qddot = -rate*qdot + drive*u`` with known flow.

    For the exponentially damped velocity all successive time derivatives
    are proportional with factor ``rate``, which makes the tightest
    derivative-link constant exactly ``rate`` and the derivative suprema
    ``rate^(k-1) * |qdot(0)|``; that is what makes this system the natural
    target for checking the closed-form error bounds by hand.
    """

    def accel(q, qdot, u):
        return (-rate * qdot[0] + drive * u[0],)

    return SecondOrderSystem(
        f"damped-velocity({rate:g})", 1, 1, accel, smoothness=10,
        params={"rate": rate, "drive": drive},
    )


def damped_velocity_flow(rate: float, drive: float, q0: float, v0: float,
                         u: float, t):
    """Exact (q, qdot) of the damped-velocity system under constant input."""
    t = np.asarray(t, dtype=float)
    v_inf = drive * u / rate
    decay = np.exp(-rate * t)
    v = v_inf + (v0 - v_inf) * decay
    q = q0 + v_inf * t + (v0 - v_inf) * (1.0 - decay) / rate
    return q, v


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceResult:
    """Errors per grid resolution and the fitted log-log slope."""

    n_list: tuple
    h_list: tuple
    errors: tuple
    slope: float

    def __iter__(self):
        return iter((self.n_list, self.h_list, self.errors, self.slope))


def _fit_slope(h_list, errors):
    h = np.asarray(h_list, dtype=float)
    e = np.maximum(np.asarray(errors, dtype=float), 1e-300)
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def convergence_study(target, scheme: Scheme, n_list: Sequence[int], *,
                      tf: float = None, x0=None, u=None, exact: Callable = None,
                      ref_multiplier: int = 8, options=None) -> ConvergenceResult:
    """Log-log convergence slope of the configuration error versus h.

    Two modes, dispatched on ``target``:

    * integrator mode (``SecondOrderSystem``): roll out with the constant
      control ``u`` from stacked state ``x0`` and measure the terminal
      configuration gap against ``exact``, a callable ``t -> q(t)``.
    * optimal control mode (``OptimalControlProblem``): solve the problem
      at each N, reconstruct, and measure ``eta_total`` against a
      reference solve at ``ref_multiplier`` times the largest N using the
      velocity-aware RK4 scheme.

    Any solve failure aborts with the failing N named.
    """
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("n_list must hold at least 3 strictly increasing entries")

    if isinstance(target, SecondOrderSystem):
        if tf is None or x0 is None or exact is None:
            raise ConfigError("integrator mode needs tf, x0, and exact flow")
        u = np.zeros(target.n_u) if u is None else np.atleast_1d(u)
        errors = []
        for n in n_list:
            h = tf / n
            controls = np.tile(u, (n, 1))
            traj = rollout(target, scheme, np.asarray(x0, float), controls, h)
            q_exact = np.atleast_1d(exact(tf))
            errors.append(float(np.max(np.abs(traj.q[-1] - q_exact))))
        h_list = [tf / n for n in n_list]
        return ConvergenceResult(tuple(n_list), tuple(h_list), tuple(errors),
                                 _fit_slope(h_list, errors))

    if isinstance(target, OptimalControlProblem):
        from dataclasses import replace

        from .solver import SolveStatus, SolverOptions, solve

        options = options or SolverOptions()
        n_ref = ref_multiplier * max(n_list)
        reference, ref_report = solve_reconstruct(
            replace(target, N=n_ref), Scheme.second_rk4(), options,
        )
        if ref_report.status != SolveStatus.OPTIMAL:
            raise EvaluationError(
                f"reference solve failed at N={n_ref} "
                f"with status {ref_report.status.value}"
            )
        errors = []
        for n in n_list:
            spline, report = solve_reconstruct(replace(target, N=n), scheme, options)
            if report.status != SolveStatus.OPTIMAL:
                raise EvaluationError(
                    f"solve failed at N={n} with status {report.status.value}"
                )
            errors.append(total_error(spline, reference).eta_total)
        h_list = [target.tf / n for n in n_list]
        return ConvergenceResult(tuple(n_list), tuple(h_list), tuple(errors),
                                 _fit_slope(h_list, errors))

    raise ConfigError(
        f"convergence_study needs a system or problem, got {type(target).__name__}"
    )


def solve_reconstruct(problem: OptimalControlProblem, scheme: Scheme, options=None):
    """Solve a problem from the all-zero initial guess and reconstruct the
    configuration spline.  Returns ``(spline, report)``."""
    from .solver import solve

    nlp = build_nlp(problem, scheme)
    z, report = solve(nlp, options, np.zeros(nlp.n_vars))
    return reconstruct(nlp.unpack(z)), report
