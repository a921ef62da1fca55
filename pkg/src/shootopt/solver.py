"""Self-contained augmented-Lagrangian solver for dense NLPs.

Equalities ``c(z) = 0`` and inequalities ``g(z) <= 0`` are folded into

    A(z; lam, mu, rho) = f(z) + lam'c + (rho/2)|c|^2
                       + (1/(2 rho)) * sum(max(0, mu + rho g)^2 - mu^2)

which is minimized over z with Armijo backtracking, either by damped
Newton steps from the banded Gauss-Newton curvature model when the
program exposes one (see ``NlpProgram.gn_hessian_band``) or by
limited-memory quasi-Newton (L-BFGS) otherwise.  Outer iterations update
the multipliers

    lam <- lam + rho*c      mu <- max(0, mu + rho*g)

and grow ``rho`` by ``penalty_growth`` whenever the maximum constraint
violation fails to shrink by 4x while the subproblem converged and the
violation still exceeds ``feas_tol``.  The solve is deterministic:
identical inputs and options produce identical iterate sequences.

First derivatives are exact, computed by forward-mode dual numbers; see
:func:`gradient`.  Programs built by :func:`shootopt.ocp.build_nlp` carry
structured fast paths (``objective_gradient``, ``eq_jac_t_prod``); plain
callback objects fall back to the generic dual-number Jacobian, so any
object with ``n_vars``/``objective``/``eq_residuals``/``ineq_residuals``
can be solved.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .duals import Dual, seed
from .errors import DimensionMismatch, EvaluationError

__all__ = [
    "SolverOptions",
    "SolveStatus",
    "SolveReport",
    "solve",
    "gradient",
    "check_derivatives",
]


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and loop limits; all tolerances strictly positive."""

    feas_tol: float = 1e-8
    stat_tol: float = 1e-6
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    max_outer: int = 30
    max_inner: int = 500
    armijo_decrease: float = 1e-4
    backtrack_factor: float = 0.5
    lbfgs_memory: int = 20

    def __post_init__(self):
        for name in ("feas_tol", "stat_tol", "penalty_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max-iterations"
    LINE_SEARCH_FAILURE = "line-search-failure"
    EVALUATION_ERROR = "evaluation-error"


@dataclass
class SolveReport:
    status: SolveStatus
    outer_iters: int
    inner_iters: int
    final_feasibility: float
    final_stationarity: float
    wall_time: float
    final_objective: float = np.nan
    # per-outer-iteration diagnostics: max constraint violation at the end
    # of the iteration, and the penalty selected in response
    feasibility_history: tuple = ()
    penalty_history: tuple = ()
    # offending point when status is EVALUATION_ERROR
    error_point: np.ndarray = None


def gradient(function: Callable, point) -> np.ndarray:
    """Exact Jacobian of ``function`` at ``point`` via forward-mode duals.

    Each input entry carries one seed direction; a single evaluation of the
    (dual-generic) callable yields all m x n partial derivatives.  Scalar
    outputs give the gradient vector, vector outputs the Jacobian.
    """
    point = np.asarray(point, dtype=float)
    out = function(seed(point))
    if isinstance(out, Dual):
        jac = np.asarray(out.dot, dtype=float)
    else:
        # function does not depend on the input
        m = np.size(out)
        jac = np.zeros((m, point.size)) if np.ndim(out) else np.zeros(point.size)
    if not np.all(np.isfinite(jac)):
        raise EvaluationError("non-finite derivative", point=point.copy())
    return jac


def _finite_diff_jacobian(function, point, step=1e-6):
    point = np.asarray(point, dtype=float)
    cols = []
    for i in range(point.size):
        forward = point.copy()
        backward = point.copy()
        forward[i] += step
        backward[i] -= step
        cols.append((np.asarray(function(forward), dtype=float)
                     - np.asarray(function(backward), dtype=float)) / (2 * step))
    return np.stack(cols, axis=-1)


def check_derivatives(nlp, point, step=1e-6) -> float:
    """Worst relative gap between dual-number and central-difference
    derivatives of the objective and both residual maps."""
    point = np.asarray(point, dtype=float)
    pairs = []
    if hasattr(nlp, "objective_gradient"):
        g_dual = np.asarray(nlp.objective_gradient(point))
    else:
        g_dual = gradient(nlp.objective, point)
    pairs.append((g_dual, _finite_diff_jacobian(nlp.objective, point, step)))
    if getattr(nlp, "n_eq", 1) > 0:
        if hasattr(nlp, "eq_jacobian"):
            j_dual = np.asarray(nlp.eq_jacobian(point))
        else:
            j_dual = gradient(nlp.eq_residuals, point)
        pairs.append((j_dual, _finite_diff_jacobian(nlp.eq_residuals, point, step)))
    if getattr(nlp, "n_ineq", 0) > 0:
        if hasattr(nlp, "ineq_jacobian"):
            j_dual = np.asarray(nlp.ineq_jacobian(point))
        else:
            j_dual = gradient(nlp.ineq_residuals, point)
        pairs.append((j_dual, _finite_diff_jacobian(nlp.ineq_residuals, point, step)))
    worst = 0.0
    for dual_jac, fd_jac in pairs:
        denom = np.maximum(1.0, np.maximum(np.abs(dual_jac), np.abs(fd_jac)))
        worst = max(worst, float(np.max(np.abs(dual_jac - fd_jac) / denom)))
    return worst


class _AugmentedLagrangian:
    """Value/gradient/curvature of the augmented Lagrangian for fixed
    multipliers."""

    def __init__(self, nlp, lam, mu, rho):
        self.nlp = nlp
        self.lam = lam
        self.mu = mu
        self.rho = rho
        self._structured = hasattr(nlp, "eq_jac_t_prod") and hasattr(
            nlp, "objective_gradient"
        )
        self.has_band = hasattr(nlp, "gn_hessian_band")

    def hess_band(self, z):
        """Banded Gauss-Newton curvature model (structured programs only)."""
        active = None
        if self.mu.size:
            g = np.asarray(self.nlp.ineq_residuals(z), dtype=float)
            active = self.mu + self.rho * g > 0
        return self.nlp.gn_hessian_band(z, self.rho, active)

    def value(self, z):
        nlp = self.nlp
        f = float(nlp.objective(z))
        total = f
        if self.lam.size:
            c = np.asarray(nlp.eq_residuals(z), dtype=float)
            total += float(self.lam @ c) + 0.5 * self.rho * float(c @ c)
        if self.mu.size:
            g = np.asarray(nlp.ineq_residuals(z), dtype=float)
            shifted = np.maximum(0.0, self.mu + self.rho * g)
            total += float(np.sum(shifted**2 - self.mu**2)) / (2 * self.rho)
        return total

    def grad(self, z):
        nlp = self.nlp
        if self._structured:
            out = np.asarray(nlp.objective_gradient(z), dtype=float)
            if self.lam.size:
                c = np.asarray(nlp.eq_residuals(z), dtype=float)
                out = out + nlp.eq_jac_t_prod(z, self.lam + self.rho * c)
            if self.mu.size:
                g = np.asarray(nlp.ineq_residuals(z), dtype=float)
                shifted = np.maximum(0.0, self.mu + self.rho * g)
                out = out + nlp.ineq_jac_t_prod(shifted)
            return out

        def scalar_al(zz):
            f = nlp.objective(zz)
            if self.lam.size:
                c = nlp.eq_residuals(zz)
                lin = _dual_dot(self.lam + 0.0, c)
                quad = _dual_dot_self(c)
                f = f + lin + 0.5 * self.rho * quad
            if self.mu.size:
                g = nlp.ineq_residuals(zz)
                f = f + _dual_hinge(self.mu, self.rho, g)
            return f

        return gradient(scalar_al, z)


def _dual_dot(w, v):
    if isinstance(v, Dual):
        return Dual(w @ v.val, w @ v.dot)
    return float(w @ v)


def _dual_dot_self(v):
    if isinstance(v, Dual):
        return Dual(v.val @ v.val, 2.0 * (v.val @ v.dot))
    return float(v @ v)


def _dual_hinge(mu, rho, g):
    if isinstance(g, Dual):
        shifted = np.maximum(0.0, mu + rho * g.val)
        val = float(np.sum(shifted**2 - mu**2)) / (2 * rho)
        dot = (shifted @ g.dot)
        return Dual(val, dot)
    shifted = np.maximum(0.0, mu + rho * np.asarray(g))
    return float(np.sum(shifted**2 - mu**2)) / (2 * rho)


def _lbfgs_direction(grad, s_list, y_list):
    """Two-loop recursion with the standard last-pair initial scaling."""
    rhos = [1.0 / (s @ y) for s, y in zip(s_list, y_list)]
    q = grad.copy()
    alphas = []
    for s, y, rho_i in zip(reversed(s_list), reversed(y_list), reversed(rhos)):
        a = rho_i * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho_i), a in zip(zip(s_list, y_list, rhos), reversed(alphas)):
        b = rho_i * (y @ q)
        q += (a - b) * s
    return -q


def _minimize_inner(al, z, tol, opts):
    """L-BFGS with Armijo backtracking on the augmented Lagrangian.

    Returns (z, grad_inf, value, iters, flag) where flag is 'converged',
    'max-iter', or 'line-search'.
    """
    f = al.value(z)
    if not np.isfinite(f):
        raise EvaluationError("non-finite merit value at inner start", point=z.copy())
    g = al.grad(z)
    s_list, y_list = [], []
    iters = 0
    flag = "max-iter"
    while iters < opts.max_inner:
        g_inf = float(np.max(np.abs(g), initial=0.0))
        if g_inf <= tol:
            flag = "converged"
            break
        d = _lbfgs_direction(g, s_list, y_list)
        descent = float(g @ d)
        if not np.isfinite(descent) or descent >= 0:
            s_list, y_list = [], []
            d = -g
            descent = float(g @ d)
        step = 1.0 if s_list else min(1.0, 1.0 / max(g_inf, 1.0))
        accepted = False
        for _ in range(60):
            z_new = z + step * d
            f_new = al.value(z_new)
            if np.isfinite(f_new) and f_new <= f + opts.armijo_decrease * step * descent:
                accepted = True
                break
            step *= opts.backtrack_factor
        iters += 1
        if not accepted:
            flag = "line-search"
            break
        g_new = al.grad(z_new)
        s = z_new - z
        y = g_new - g
        sy = float(s @ y)
        if np.isfinite(sy) and sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            if len(s_list) > opts.lbfgs_memory:
                s_list.pop(0)
                y_list.pop(0)
        z, f, g = z_new, f_new, g_new
    g_inf = float(np.max(np.abs(g), initial=0.0))
    return z, g_inf, f, iters, flag


def _minimize_inner_newton(al, z, tol, opts):
    """Damped Newton steps from the banded Gauss-Newton model, with Armijo
    backtracking on the augmented Lagrangian.  Same return contract as
    :func:`_minimize_inner`."""
    f = al.value(z)
    if not np.isfinite(f):
        raise EvaluationError("non-finite merit value at inner start", point=z.copy())
    g = al.grad(z)
    nu = 1e-8
    iters = 0
    flag = "max-iter"
    while iters < opts.max_inner:
        g_inf = float(np.max(np.abs(g), initial=0.0))
        if g_inf <= tol:
            flag = "converged"
            break
        band = al.hess_band(z)
        scale = max(float(np.max(band[-1])), 1.0)
        accepted = False
        z_new = z
        f_new = f
        for _ in range(30):
            damped = band.copy()
            damped[-1] += nu * scale
            try:
                d = scipy.linalg.solveh_banded(damped, -g, lower=False)
            except np.linalg.LinAlgError:
                nu = max(nu * 10.0, 1e-10)
                continue
            descent = float(g @ d)
            if not np.all(np.isfinite(d)) or descent >= 0:
                nu = max(nu * 10.0, 1e-10)
                continue
            step = 1.0
            ok = False
            for _ in range(40):
                z_try = z + step * d
                f_try = al.value(z_try)
                if np.isfinite(f_try) and (
                    f_try <= f + opts.armijo_decrease * step * descent
                ):
                    ok = True
                    break
                step *= opts.backtrack_factor
                if step < 1e-18:
                    break
            if ok:
                z_new, f_new = z_try, f_try
                accepted = True
                break
            nu = max(nu * 10.0, 1e-10)
        iters += 1
        if not accepted:
            flag = "line-search"
            break
        z, f = z_new, f_new
        g = al.grad(z)
        nu = max(nu / 3.0, 1e-10)
    g_inf = float(np.max(np.abs(g), initial=0.0))
    return z, g_inf, f, iters, flag


def _violation(nlp, z):
    worst = 0.0
    if getattr(nlp, "n_eq", 0):
        c = np.asarray(nlp.eq_residuals(z), dtype=float)
        if c.size:
            worst = max(worst, float(np.max(np.abs(c))))
    if getattr(nlp, "n_ineq", 0):
        g = np.asarray(nlp.ineq_residuals(z), dtype=float)
        if g.size:
            worst = max(worst, float(np.max(np.maximum(0.0, g))))
    return worst


def solve(nlp, opts: SolverOptions = None, initial=None):
    """Minimize an NLP by the augmented-Lagrangian method.

    Returns ``(z, report)`` with the best iterate found (most feasible,
    then lowest objective).  Callback evaluation failures surface as
    ``SolveStatus.EVALUATION_ERROR`` with the report carrying the progress
    made; the offending point stays on the raised error's ``point``.
    """
    opts = opts or SolverOptions()
    n = nlp.n_vars
    if initial is None:
        initial = np.zeros(n)
    z = np.asarray(initial, dtype=float).copy()
    if z.shape != (n,):
        raise DimensionMismatch(f"initial point must have shape ({n},), got {z.shape}")

    m_eq = getattr(nlp, "n_eq", None)
    if m_eq is None:
        m_eq = np.asarray(nlp.eq_residuals(z)).size
    m_ineq = getattr(nlp, "n_ineq", None)
    if m_ineq is None:
        m_ineq = np.asarray(nlp.ineq_residuals(z)).size

    lam = np.zeros(m_eq)
    mu = np.zeros(m_ineq)
    rho = opts.penalty_init

    start = time.perf_counter()
    best_z = z.copy()
    best_key = (np.inf, np.inf)
    feas_hist, rho_hist = [], []
    inner_total = 0
    status = SolveStatus.MAX_ITERATIONS
    stationarity = np.inf
    feasibility = np.inf
    prev_violation = np.inf
    inner_tol = max(opts.stat_tol, 1e-3)
    last_flag = "max-iter"
    outer = 0
    error_point = None

    try:
        for outer in range(1, opts.max_outer + 1):
            al = _AugmentedLagrangian(nlp, lam, mu, rho)
            inner = _minimize_inner_newton if al.has_band else _minimize_inner
            z, g_inf, f_val, inner_iters, last_flag = inner(al, z, inner_tol, opts)
            inner_total += inner_iters
            feasibility = _violation(nlp, z)
            stationarity = g_inf
            feas_hist.append(feasibility)
            key = (max(feasibility - opts.feas_tol, 0.0), float(nlp.objective(z)))
            if key < best_key:
                best_key = key
                best_z = z.copy()
            if feasibility <= opts.feas_tol and stationarity <= opts.stat_tol:
                rho_hist.append(rho)
                status = SolveStatus.OPTIMAL
                break
            # multiplier update at the current iterate
            if m_eq:
                lam = lam + rho * np.asarray(nlp.eq_residuals(z), dtype=float)
            if m_ineq:
                mu = np.maximum(
                    0.0, mu + rho * np.asarray(nlp.ineq_residuals(z), dtype=float)
                )
            # grow the penalty when the violation fails to shrink 4x.  The
            # test only applies when the subproblem was actually solved (an
            # unconverged inner loop says nothing about the penalty), and
            # growth stops once inside the feasibility tolerance, where it
            # would only poison the subproblem conditioning.
            grew = False
            if (
                last_flag == "converged"
                and feasibility > opts.feas_tol
                and feasibility > prev_violation / 4.0
            ):
                rho *= opts.penalty_growth
                grew = True
            rho_hist.append(rho)
            prev_violation = feasibility
            if feasibility <= opts.feas_tol:
                inner_tol = opts.stat_tol
            elif not grew:
                inner_tol = max(opts.stat_tol, inner_tol * 0.2)
        else:
            status = (
                SolveStatus.LINE_SEARCH_FAILURE
                if last_flag == "line-search"
                else SolveStatus.MAX_ITERATIONS
            )
    except EvaluationError as err:
        status = SolveStatus.EVALUATION_ERROR
        error_point = err.point

    wall = time.perf_counter() - start
    if status == SolveStatus.OPTIMAL:
        final_z = z
    else:
        final_z = best_z if best_key < (np.inf, np.inf) else z
    try:
        final_obj = float(nlp.objective(final_z))
        final_feas = _violation(nlp, final_z)
    except EvaluationError:
        final_obj, final_feas = np.nan, np.inf
    report = SolveReport(
        status=status,
        outer_iters=outer,
        inner_iters=inner_total,
        final_feasibility=final_feas,
        final_stationarity=stationarity,
        wall_time=wall,
        final_objective=final_obj,
        feasibility_history=tuple(feas_hist),
        penalty_history=tuple(rho_hist),
        error_point=error_point if status == SolveStatus.EVALUATION_ERROR else None,
    )
    return final_z, report
