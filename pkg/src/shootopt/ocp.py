"""Discrete optimal control problems and their nonlinear programs.

:func:`build_nlp` transcribes a fixed-horizon problem into a dense NLP over
the decision vector

    z = [q_0, qd_0, u_0, q_1, qd_1, u_1, ..., u_{N-1}, q_N, qd_N]

with all knot states as decision variables and one defect equality block
per interval (the forward rollout remains available separately for
simulation and verification).  The running cost is accumulated with the
left-rectangle rule ``sum_k l(x_k, u_k) * h`` over intervals 0..N-1; the
terminal cost is a quadratic on the final knot.  Controls exist at knots
0..N-1 only (zero-order hold per interval).

Residual and objective callbacks accept either a plain float vector or a
:class:`~shootopt.duals.Dual` vector, so exact forward-mode Jacobians come
from the same code path that evaluates them.  An :class:`NlpProgram` is
immutable after construction; its callbacks are pure and reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .duals import Dual, concat
from .dynamics import SecondOrderSystem
from .errors import ConfigError, DimensionMismatch
from .transcription import KnotTrajectory, Scheme, SchemeKind, _advance, _resolve

__all__ = ["QuadraticStageCost", "QuadraticTerminalCost", "OptimalControlProblem",
           "NlpProgram", "build_nlp"]


def _psd_check(mat, name, strict=False):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigError(f"{name} must be a square matrix")
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise ConfigError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(mat)
    floor = 1e-12 * max(1.0, float(np.max(np.abs(eigs), initial=0.0)))
    if strict and np.min(eigs) <= 0:
        raise ConfigError(f"{name} must be positive definite")
    if not strict and np.min(eigs) < -floor:
        raise ConfigError(f"{name} must be positive semidefinite")
    return mat


@dataclass(frozen=True)
class QuadraticStageCost:
    """Running cost 0.5*(x-x_ref)'Q(x-x_ref) + 0.5*(u-u_ref)'R(u-u_ref)."""

    Q: np.ndarray
    R: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray


@dataclass(frozen=True)
class QuadraticTerminalCost:
    """Terminal cost 0.5*(x_N-x_ref)'Qf(x_N-x_ref)."""

    Qf: np.ndarray
    x_ref: np.ndarray


@dataclass(frozen=True)
class OptimalControlProblem:
    """Fixed final time, quadratic costs, boundary and path constraints.

    The initial state is always fixed; terminal components are fixed where
    ``terminal_mask`` is true.  Bounds may be infinite to disable a side.
    """

    system: SecondOrderSystem
    tf: float
    N: int
    stage_cost: QuadraticStageCost
    terminal_cost: QuadraticTerminalCost
    initial_state: np.ndarray
    terminal_state: np.ndarray = None
    terminal_mask: np.ndarray = None
    control_lower: np.ndarray = None
    control_upper: np.ndarray = None
    state_lower: np.ndarray = None
    state_upper: np.ndarray = None

    def __post_init__(self):
        if not self.tf > 0:
            raise ConfigError(f"tf must be positive, got {self.tf}")
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        n_x = 2 * self.system.n_q
        n_u = self.system.n_u

        def _vec(name, val, size, fill):
            if val is None:
                val = np.full(size, fill)
            val = np.asarray(val, dtype=float)
            if val.shape != (size,):
                raise ConfigError(f"{name} must have shape ({size},), got {val.shape}")
            return val

        object.__setattr__(self, "initial_state",
                           _vec("initial_state", self.initial_state, n_x, 0.0))
        object.__setattr__(self, "terminal_state",
                           _vec("terminal_state", self.terminal_state, n_x, 0.0))
        mask = self.terminal_mask
        if mask is None:
            mask = np.zeros(n_x, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n_x,):
            raise ConfigError(f"terminal_mask must have shape ({n_x},)")
        object.__setattr__(self, "terminal_mask", mask)
        object.__setattr__(self, "control_lower",
                           _vec("control_lower", self.control_lower, n_u, -np.inf))
        object.__setattr__(self, "control_upper",
                           _vec("control_upper", self.control_upper, n_u, np.inf))
        if np.any(self.control_lower > self.control_upper):
            raise ConfigError("control_lower exceeds control_upper")
        if self.state_lower is not None or self.state_upper is not None:
            object.__setattr__(self, "state_lower",
                               _vec("state_lower", self.state_lower, n_x, -np.inf))
            object.__setattr__(self, "state_upper",
                               _vec("state_upper", self.state_upper, n_x, np.inf))
            if np.any(self.state_lower > self.state_upper):
                raise ConfigError("state_lower exceeds state_upper")
        sc, tc = self.stage_cost, self.terminal_cost
        q = _psd_check(sc.Q, "Q")
        r = _psd_check(sc.R, "R", strict=True)
        qf = _psd_check(tc.Qf, "Qf")
        if q.shape != (n_x, n_x):
            raise ConfigError(f"Q must be {n_x}x{n_x}")
        if r.shape != (n_u, n_u):
            raise ConfigError(f"R must be {n_u}x{n_u}")
        if qf.shape != (n_x, n_x):
            raise ConfigError(f"Qf must be {n_x}x{n_x}")
        object.__setattr__(self, "stage_cost", QuadraticStageCost(
            q, r, _vec("x_ref", sc.x_ref, n_x, 0.0), _vec("u_ref", sc.u_ref, n_u, 0.0)))
        object.__setattr__(self, "terminal_cost", QuadraticTerminalCost(
            qf, _vec("terminal x_ref", tc.x_ref, n_x, 0.0)))

    @property
    def h(self) -> float:
        return self.tf / self.N


def _col(z, idx):
    """Gather entries of a float or Dual vector by integer index array."""
    return z[idx]


def _batch_sum(x):
    if isinstance(x, Dual):
        return Dual(np.sum(x.val), np.sum(x.dot, axis=0))
    return np.sum(x)


def _quad_form(weight, errs):
    """0.5 * e' W e over scalar-like coordinates; skips zero entries."""
    total = None
    n = len(errs)
    for i in range(n):
        for j in range(i, n):
            w = weight[i, j] if i == j else 2.0 * weight[i, j]
            if w == 0.0:
                continue
            term = (0.5 * w) * (errs[i] * errs[j])
            total = term if total is None else total + term
    return total


class NlpProgram:
    """Dense NLP: decision layout, objective, residual maps, Jacobians.

    Equality residuals stack the N defect blocks (interval-major), the
    fixed initial state, then the fixed terminal components.  Inequality
    residuals are the folded simple bounds, ``g(z) <= 0`` row per finite
    bound: state bounds at knots 0..N, control bounds at intervals 0..N-1.
    """

    def __init__(self, problem: OptimalControlProblem, scheme: Scheme):
        if scheme.kind not in SchemeKind:
            raise ConfigError(f"unsupported scheme {scheme!r}")
        self.problem = problem
        self.scheme = scheme
        sys2, high, flow = _resolve(problem.system, scheme)
        if high.order != 2:
            raise ConfigError("NLP transcription expects an order-2 system")
        self._sys2, self._high, self._flow = sys2, high, flow

        n_q, n_u, n = problem.system.n_q, problem.system.n_u, problem.N
        n_x = 2 * n_q
        stride = n_x + n_u
        self.n_vars = (n + 1) * n_x + n * n_u
        self.x_indices = np.empty((n + 1, n_x), dtype=int)
        self.u_indices = np.empty((n, n_u), dtype=int)
        for k in range(n + 1):
            base = k * stride
            self.x_indices[k] = base + np.arange(n_x)
            if k < n:
                self.u_indices[k] = base + n_x + np.arange(n_u)
        self.layout = []
        for k in range(n + 1):
            self.layout.append((f"q_{k}", int(self.x_indices[k, 0]), n_q))
            self.layout.append((f"qd_{k}", int(self.x_indices[k, n_q]), n_q))
            if k < n:
                self.layout.append((f"u_{k}", int(self.u_indices[k, 0]), n_u))

        self.n_defect = n * n_x
        self.n_eq = self.n_defect + n_x + int(problem.terminal_mask.sum())
        # local derivative directions of one defect block: (x_k, u_k)
        self._n_local = n_x + n_u
        self._local_cols = np.hstack([self.x_indices[:-1], self.u_indices])

        # folded bounds: each row is sign * z[var] - rhs <= 0
        var_idx, sign, rhs = [], [], []
        if problem.state_lower is not None:
            for k in range(n + 1):
                for j in range(n_x):
                    if np.isfinite(problem.state_lower[j]):
                        var_idx.append(self.x_indices[k, j])
                        sign.append(-1.0)
                        rhs.append(-problem.state_lower[j])
                    if np.isfinite(problem.state_upper[j]):
                        var_idx.append(self.x_indices[k, j])
                        sign.append(1.0)
                        rhs.append(problem.state_upper[j])
        for k in range(n):
            for j in range(n_u):
                if np.isfinite(problem.control_lower[j]):
                    var_idx.append(self.u_indices[k, j])
                    sign.append(-1.0)
                    rhs.append(-problem.control_lower[j])
                if np.isfinite(problem.control_upper[j]):
                    var_idx.append(self.u_indices[k, j])
                    sign.append(1.0)
                    rhs.append(problem.control_upper[j])
        self._ineq_var = np.asarray(var_idx, dtype=int)
        self._ineq_sign = np.asarray(sign, dtype=float)
        self._ineq_rhs = np.asarray(rhs, dtype=float)
        self.n_ineq = len(var_idx)

        # variables of one defect window (x_k, u_k, x_{k+1}) are contiguous,
        # so every quadratic-model coupling fits in a fixed band
        self.band_half_width = stride + n_x - 1
        self._window = stride + n_x
        self._obj_band = self._objective_hessian_band()
        # relative band coordinates of one window's symmetric block
        i_rel, j_rel = np.meshgrid(np.arange(self._window), np.arange(self._window),
                                   indexing="ij")
        keep = i_rel <= j_rel
        self._band_row = (self.band_half_width + i_rel - j_rel)[keep]
        self._band_colrel = j_rel[keep]
        self._band_irel = i_rel[keep]

    # -- evaluation ------------------------------------------------------

    def _check_len(self, z):
        size = z.val.size if isinstance(z, Dual) else np.asarray(z).size
        if size != self.n_vars:
            raise DimensionMismatch(
                f"decision vector has length {size}, expected {self.n_vars}"
            )

    def _predicted(self, z):
        """Advance all interval-start knots one step; batched over k."""
        p = self.problem
        n_x = 2 * p.system.n_q
        state = tuple(_col(z, self.x_indices[:-1, j]) for j in range(n_x))
        u = tuple(_col(z, self.u_indices[:, j]) for j in range(p.system.n_u))
        return _advance(self._sys2, self._high, self._flow, self.scheme,
                        state, u, p.h)

    def eq_residuals(self, z):
        """Defect blocks, then fixed initial, then fixed terminal rows."""
        self._check_len(z)
        p = self.problem
        n_x = 2 * p.system.n_q
        predicted = self._predicted(z)
        cols = [predicted[j] - _col(z, self.x_indices[1:, j]) for j in range(n_x)]
        defects = _interleave(cols)
        x0 = _col(z, self.x_indices[0]) - p.initial_state
        parts = [defects, x0]
        if p.terminal_mask.any():
            xt = _col(z, self.x_indices[-1][p.terminal_mask])
            parts.append(xt - p.terminal_state[p.terminal_mask])
        return concat(parts)

    def ineq_residuals(self, z):
        self._check_len(z)
        if self.n_ineq == 0:
            if isinstance(z, Dual):
                return Dual(np.zeros(0), np.zeros((0, z.dot.shape[-1])))
            return np.zeros(0)
        return self._ineq_sign * _col(z, self._ineq_var) - self._ineq_rhs

    def objective(self, z):
        self._check_len(z)
        p = self.problem
        n_x, n_u = 2 * p.system.n_q, p.system.n_u
        sc, tc = p.stage_cost, p.terminal_cost
        x_err = [
            _col(z, self.x_indices[:-1, j]) - sc.x_ref[j] for j in range(n_x)
        ]
        u_err = [_col(z, self.u_indices[:, j]) - sc.u_ref[j] for j in range(n_u)]
        total = 0.0
        stage = _quad_form(sc.Q, x_err)
        if stage is not None:
            total = total + p.h * _batch_sum(stage)
        ctrl = _quad_form(sc.R, u_err)
        if ctrl is not None:
            total = total + p.h * _batch_sum(ctrl)
        xt_err = [
            _col(z, self.x_indices[-1, j]) - tc.x_ref[j] for j in range(n_x)
        ]
        term = _quad_form(tc.Qf, xt_err)
        if term is not None:
            total = total + term
        return total

    # -- derivatives -----------------------------------------------------

    def _defect_block_jac(self, z):
        """Derivative tensor (N, n_x, n_local) of predicted states wrt
        the interval-start knot variables (x_k, u_k), via one dual pass."""
        z = np.asarray(z, dtype=float)
        p = self.problem
        n_x = 2 * p.system.n_q
        n_loc = self._n_local
        big_n = p.N
        eye = np.eye(n_loc)
        state = tuple(
            Dual(z[self.x_indices[:-1, j]],
                 np.broadcast_to(eye[j], (big_n, n_loc)))
            for j in range(n_x)
        )
        u = tuple(
            Dual(z[self.u_indices[:, j]],
                 np.broadcast_to(eye[n_x + j], (big_n, n_loc)))
            for j in range(p.system.n_u)
        )
        predicted = _advance(self._sys2, self._high, self._flow, self.scheme,
                             state, u, p.h)
        out = np.empty((big_n, n_x, n_loc))
        for j, pj in enumerate(predicted):
            if isinstance(pj, Dual):
                out[:, j, :] = np.broadcast_to(pj.dot, (big_n, n_loc))
            else:
                out[:, j, :] = 0.0
        return out

    def eq_jacobian(self, z) -> np.ndarray:
        """Dense equality Jacobian (exact, forward-mode)."""
        z = np.asarray(z, dtype=float)
        self._check_len(z)
        p = self.problem
        n_x = 2 * p.system.n_q
        jac = np.zeros((self.n_eq, self.n_vars))
        block = self._defect_block_jac(z)
        for k in range(p.N):
            rows = slice(k * n_x, (k + 1) * n_x)
            jac[rows, self._local_cols[k]] = block[k]
            jac[rows, self.x_indices[k + 1]] -= np.eye(n_x)
        row = self.n_defect
        jac[row : row + n_x, self.x_indices[0]] = np.eye(n_x)
        row += n_x
        for j in np.flatnonzero(p.terminal_mask):
            jac[row, self.x_indices[-1, j]] = 1.0
            row += 1
        return jac

    def eq_jac_t_prod(self, z, w) -> np.ndarray:
        """``J_eq(z)' @ w`` without materializing the Jacobian."""
        z = np.asarray(z, dtype=float)
        p = self.problem
        n_x = 2 * p.system.n_q
        out = np.zeros(self.n_vars)
        w_def = np.asarray(w[: self.n_defect]).reshape(p.N, n_x)
        block = self._defect_block_jac(z)
        local = np.einsum("krd,kr->kd", block, w_def)
        np.add.at(out, self._local_cols, local)
        np.subtract.at(out, self.x_indices[1:], w_def)
        row = self.n_defect
        out[self.x_indices[0]] += w[row : row + n_x]
        row += n_x
        for j in np.flatnonzero(p.terminal_mask):
            out[self.x_indices[-1, j]] += w[row]
            row += 1
        return out

    def ineq_jacobian(self, z=None) -> np.ndarray:
        """Dense inequality Jacobian (constant: folded simple bounds)."""
        jac = np.zeros((self.n_ineq, self.n_vars))
        jac[np.arange(self.n_ineq), self._ineq_var] = self._ineq_sign
        return jac

    def ineq_jac_t_prod(self, w) -> np.ndarray:
        out = np.zeros(self.n_vars)
        np.add.at(out, self._ineq_var, self._ineq_sign * np.asarray(w))
        return out

    def objective_gradient(self, z) -> np.ndarray:
        """Exact objective gradient via a block-local dual pass."""
        z = np.asarray(z, dtype=float)
        self._check_len(z)
        p = self.problem
        n_x, n_u = 2 * p.system.n_q, p.system.n_u
        sc, tc = p.stage_cost, p.terminal_cost
        n_loc = self._n_local
        eye = np.eye(n_loc)
        big_n = p.N
        out = np.zeros(self.n_vars)
        x_err = [
            Dual(z[self.x_indices[:-1, j]] - sc.x_ref[j],
                 np.broadcast_to(eye[j], (big_n, n_loc)))
            for j in range(n_x)
        ]
        u_err = [
            Dual(z[self.u_indices[:, j]] - sc.u_ref[j],
                 np.broadcast_to(eye[n_x + j], (big_n, n_loc)))
            for j in range(n_u)
        ]
        stage = _quad_form(sc.Q, x_err)
        ctrl = _quad_form(sc.R, u_err)
        acc = None
        for part in (stage, ctrl):
            if part is not None:
                acc = part if acc is None else acc + part
        if acc is not None and isinstance(acc, Dual):
            np.add.at(out, self._local_cols,
                      p.h * np.broadcast_to(acc.dot, (big_n, n_loc)))
        xt_err = [
            Dual(z[self.x_indices[-1, j]] - tc.x_ref[j], np.eye(n_x)[j])
            for j in range(n_x)
        ]
        term = _quad_form(tc.Qf, xt_err)
        if term is not None and isinstance(term, Dual):
            out[self.x_indices[-1]] += term.dot
        return out

    def _objective_hessian_band(self) -> np.ndarray:
        """Constant objective Hessian in symmetric upper-band storage."""
        p = self.problem
        n_x, n_u = 2 * p.system.n_q, p.system.n_u
        u = self.band_half_width
        band = np.zeros((u + 1, self.n_vars))
        sc, tc = p.stage_cost, p.terminal_cost

        def add_block(cols, mat):
            for a in range(len(cols)):
                for b in range(a, len(cols)):
                    if mat[a, b] != 0.0:
                        band[u + cols[a] - cols[b], cols[b]] += mat[a, b]

        for k in range(p.N):
            add_block(self.x_indices[k], p.h * sc.Q)
            add_block(self.u_indices[k], p.h * sc.R)
        add_block(self.x_indices[-1], tc.Qf)
        return band

    def gn_hessian_band(self, z, rho, ineq_active=None) -> np.ndarray:
        """Gauss-Newton model of the augmented-Lagrangian Hessian,
        ``H_obj + rho*(J_eq'J_eq + J_act'J_act)``, in upper-band storage
        for a symmetric banded solve (row ``band_half_width`` holds the
        diagonal).  Constraint curvature is left out of the model; the
        gradient stays exact."""
        p = self.problem
        n_x = 2 * p.system.n_q
        u = self.band_half_width
        band = self._obj_band.copy()
        block = self._defect_block_jac(z)
        # window Jacobian [B_k, -I] gives the symmetric blocks
        # [B'B, -B'; -B, I]
        big_n = p.N
        w = self._window
        n_loc = self._n_local
        g_full = np.empty((big_n, w, w))
        btb = np.einsum("kri,krj->kij", block, block)
        g_full[:, :n_loc, :n_loc] = btb
        g_full[:, :n_loc, n_loc:] = -np.transpose(block, (0, 2, 1))
        g_full[:, n_loc:, :n_loc] = -block
        g_full[:, n_loc:, n_loc:] = np.eye(n_x)
        vals = rho * g_full[:, self._band_irel, self._band_colrel]
        offsets = np.arange(big_n)[:, None] * (n_loc)  # window start = k*stride
        rows = np.broadcast_to(self._band_row, (big_n, len(self._band_row)))
        cols = offsets + self._band_colrel
        np.add.at(band, (rows.ravel(), cols.ravel()), vals.ravel())
        # boundary identity rows
        band[u, self.x_indices[0]] += rho
        for j in np.flatnonzero(p.terminal_mask):
            band[u, self.x_indices[-1, j]] += rho
        # active simple bounds contribute on the diagonal only
        if ineq_active is not None and np.any(ineq_active):
            np.add.at(band, (u, self._ineq_var[ineq_active]),
                      rho * np.ones(int(np.sum(ineq_active))))
        return band

    # -- packing ---------------------------------------------------------

    def pack(self, states, controls) -> np.ndarray:
        """Interleave knot states (N+1, 2*n_q) and controls (N, n_u)."""
        p = self.problem
        states = np.asarray(states, dtype=float)
        controls = np.asarray(controls, dtype=float)
        if states.shape != self.x_indices.shape:
            raise DimensionMismatch(
                f"states must have shape {self.x_indices.shape}, got {states.shape}"
            )
        if controls.shape != self.u_indices.shape:
            raise DimensionMismatch(
                f"controls must have shape {self.u_indices.shape}, got {controls.shape}"
            )
        z = np.empty(self.n_vars)
        z[self.x_indices] = states
        z[self.u_indices] = controls
        return z

    def unpack(self, z) -> KnotTrajectory:
        """Inverse of :func:`pack`; times are ``{0, h, ..., N*h}``."""
        z = np.asarray(z, dtype=float)
        self._check_len(z)
        p = self.problem
        n_q = p.system.n_q
        states = z[self.x_indices]
        return KnotTrajectory(
            times=p.h * np.arange(p.N + 1),
            q=states[:, :n_q],
            derivs=states[:, n_q:].reshape(p.N + 1, 1, n_q),
            controls=z[self.u_indices],
        )

    def pack_trajectory(self, traj: KnotTrajectory) -> np.ndarray:
        states = np.hstack([traj.q, traj.qdot])
        return self.pack(states, traj.controls)


def _interleave(cols):
    """Stack per-coordinate interval arrays into one interval-major vector."""
    if any(isinstance(c, Dual) for c in cols):
        n_dirs = next(c.dot.shape[-1] for c in cols if isinstance(c, Dual))
        big_n = next(np.shape(c.val)[0] for c in cols if isinstance(c, Dual))
        vals, dots = [], []
        for c in cols:
            if isinstance(c, Dual):
                vals.append(np.broadcast_to(np.asarray(c.val, float), (big_n,)))
                dots.append(np.broadcast_to(c.dot, (big_n, n_dirs)))
            else:
                vals.append(np.broadcast_to(np.asarray(c, float), (big_n,)))
                dots.append(np.zeros((big_n, n_dirs)))
        val = np.stack(vals, axis=1).reshape(-1)
        dot = np.stack(dots, axis=1).reshape(-1, n_dirs)
        return Dual(val, dot)
    big_n = max((np.shape(c)[0] for c in cols if np.ndim(c)), default=1)
    arrs = [np.broadcast_to(np.asarray(c, float), (big_n,)) for c in cols]
    return np.stack(arrs, axis=1).reshape(-1)


def build_nlp(problem: OptimalControlProblem, scheme: Scheme) -> NlpProgram:
    """Assemble the dense NLP for a problem under a discretization scheme."""
    return NlpProgram(problem, scheme)
