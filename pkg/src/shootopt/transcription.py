"""Single-step propagators, rollouts, and defect residuals.

Five discretization schemes are provided:

* ``FIRST_EULER`` / ``FIRST_RK4`` -- classic explicit Runge-Kutta steps on
  the stacked first-order form of the system.
* ``SECOND_EULER`` / ``SECOND_RK4`` -- velocity-aware steps that integrate
  the configuration through its exact integral relationship with the
  velocity instead of treating both as independent first-order states.
  The configuration update of the second-order RK4 step is

      q+ = q + h*qd + h*(K1/5 + K2/6 + K3/10 + K4/30)

  with stages evaluated at velocity estimates ``qd + K/2`` (``+ K3`` for
  the last stage) and position arguments ``q + (h/2)*qd`` (``q + h*qd``
  for the last stage).  The stage weights on q sum to 1/2.
* ``EULER_ORDER_N`` -- the Euler-type step generalized to order-N systems:
  each derivative level is advanced by its truncated Taylor polynomial,
  closed with the top derivative F evaluated at the knot:

      q^(i)+ = sum_{j=0}^{N-1-i} h^j/j! * q^(i+j)  +  h^(N-i)/(N-i)! * F

Controls are zero-order hold: one value per interval, constant across all
stages of a step.  All operations are pure functions and safe for
concurrent use.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, EvaluationError
from .dynamics import (
    FirstOrderSystem,
    HighOrderSystem,
    SecondOrderSystem,
    as_high_order,
    as_second_order,
    augment,
)

__all__ = [
    "SchemeKind",
    "Scheme",
    "KnotTrajectory",
    "step_first_euler",
    "step_second_euler",
    "step_first_rk4",
    "step_second_rk4",
    "step_euler_order_n",
    "rollout",
    "defect",
]


class SchemeKind(enum.Enum):
    FIRST_EULER = "1st-euler"
    SECOND_EULER = "2nd-euler"
    FIRST_RK4 = "1st-rk4"
    SECOND_RK4 = "2nd-rk4"
    EULER_ORDER_N = "euler-order-n"


_RK4_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.0],
        [0.0, 0.5, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ]
)
_RK4_B = np.array([1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0])


@dataclass(frozen=True)
class Scheme:
    """A discretization scheme plus its stage coefficients.

    ``tableau_a``/``tableau_b`` hold the classic explicit Runge-Kutta
    coefficients for the first-order kinds (lower-triangular a, weights b);
    the second-order kinds carry their stage structure in code.
    ``order_hint`` is the expected global convergence order, for
    documentation and reporting only.
    """

    kind: SchemeKind
    tableau_a: np.ndarray = field(default=None, repr=False)
    tableau_b: np.ndarray = field(default=None, repr=False)
    order_hint: int = 1

    @property
    def stages(self) -> int:
        return 0 if self.tableau_b is None else len(self.tableau_b)

    @property
    def label(self) -> str:
        return self.kind.value

    @staticmethod
    def first_euler() -> "Scheme":
        return Scheme(SchemeKind.FIRST_EULER, np.zeros((1, 1)), np.array([1.0]), 1)

    @staticmethod
    def second_euler() -> "Scheme":
        return Scheme(SchemeKind.SECOND_EULER, order_hint=1)

    @staticmethod
    def first_rk4() -> "Scheme":
        return Scheme(SchemeKind.FIRST_RK4, _RK4_A.copy(), _RK4_B.copy(), 4)

    @staticmethod
    def second_rk4() -> "Scheme":
        return Scheme(SchemeKind.SECOND_RK4, order_hint=4)

    @staticmethod
    def euler_order_n() -> "Scheme":
        return Scheme(SchemeKind.EULER_ORDER_N, order_hint=1)

    @staticmethod
    def from_name(name: str) -> "Scheme":
        table = {
            "1st-euler": Scheme.first_euler,
            "2nd-euler": Scheme.second_euler,
            "1st-rk4": Scheme.first_rk4,
            "2nd-rk4": Scheme.second_rk4,
            "euler-order-n": Scheme.euler_order_n,
        }
        if name not in table:
            raise ConfigError(
                f"unknown scheme '{name}'; valid names: {', '.join(sorted(table))}"
            )
        return table[name]()


@dataclass(frozen=True)
class KnotTrajectory:
    """Uniform time grid with per-knot configuration, derivatives, controls.

    Shapes: ``times`` (N+1,), ``q`` (N+1, n_q), ``derivs`` (N+1, order-1,
    n_q), ``controls`` (N, n_u).  Controls are zero-order hold over each
    interval.  The grid must be strictly increasing and uniform to within
    one part in 1e12.
    """

    times: np.ndarray
    q: np.ndarray
    derivs: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        steps = np.diff(times)
        if len(times) < 2 or np.any(steps <= 0):
            raise DimensionMismatch("times must be strictly increasing, length >= 2")
        h = steps[0]
        if np.max(np.abs(steps - h)) > 1e-12 * max(abs(h), 1e-300):
            raise DimensionMismatch("time grid is not uniform to 1e-12")
        n_knots = len(times)
        if self.q.shape[0] != n_knots or self.derivs.shape[0] != n_knots:
            raise DimensionMismatch("q/derivs knot count does not match times")
        if self.derivs.shape[2] != self.q.shape[1]:
            raise DimensionMismatch("derivs coordinate count does not match q")
        if self.controls.shape[0] != n_knots - 1:
            raise DimensionMismatch("controls must have one row per interval")

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    @property
    def qdot(self) -> np.ndarray:
        """First derivative block (the full velocity for order-2 systems)."""
        return self.derivs[:, 0, :]


# ---------------------------------------------------------------------------
# generic step kernels (scalar-like coordinates; batched and dual friendly)
# ---------------------------------------------------------------------------


def _kernel_first_rk(flow, x, u, h, a, b):
    s = len(b)
    ks = []
    for i in range(s):
        xi = x
        for j in range(i):
            if a[i][j] != 0.0:
                xi = tuple(xi[m] + a[i][j] * ks[j][m] for m in range(len(x)))
        ks.append(tuple(h * f for f in flow(xi, u)))
    out = list(x)
    for i in range(s):
        if b[i] != 0.0:
            out = [out[m] + b[i] * ks[i][m] for m in range(len(x))]
    return tuple(out)


def _kernel_second_euler(accel, q, qd, u, h):
    k1 = tuple(h * f for f in accel(q, qd, u))
    q1 = tuple(q[i] + h * qd[i] + 0.5 * h * k1[i] for i in range(len(q)))
    qd1 = tuple(qd[i] + k1[i] for i in range(len(q)))
    return q1, qd1


def _kernel_second_rk4(accel, q, qd, u, h):
    n = len(q)
    half = 0.5 * h
    k1 = tuple(h * f for f in accel(q, qd, u))
    q_half = tuple(q[i] + half * qd[i] for i in range(n))
    k2 = tuple(
        h * f for f in accel(q_half, tuple(qd[i] + 0.5 * k1[i] for i in range(n)), u)
    )
    k3 = tuple(
        h * f for f in accel(q_half, tuple(qd[i] + 0.5 * k2[i] for i in range(n)), u)
    )
    q_full = tuple(q[i] + h * qd[i] for i in range(n))
    k4 = tuple(
        h * f for f in accel(q_full, tuple(qd[i] + k3[i] for i in range(n)), u)
    )
    q1 = tuple(
        q[i]
        + h * qd[i]
        + h * (k1[i] / 5.0 + k2[i] / 6.0 + k3[i] / 10.0 + k4[i] / 30.0)
        for i in range(n)
    )
    qd1 = tuple(
        qd[i] + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0 for i in range(n)
    )
    return q1, qd1


def _factorials(n):
    out = [1.0]
    for j in range(1, n + 1):
        out.append(out[-1] * j)
    return out


def _kernel_euler_order_n(top_deriv, derivs, u, h, order):
    n_q = len(derivs[0])
    fact = _factorials(order)
    top = top_deriv(derivs, u)
    out = []
    for i in range(order):
        level = []
        for m in range(n_q):
            acc = derivs[i][m]
            for j in range(1, order - i):
                acc = acc + (h**j / fact[j]) * derivs[i + j][m]
            acc = acc + (h ** (order - i) / fact[order - i]) * top[m]
            level.append(acc)
        out.append(tuple(level))
    return tuple(out)


# ---------------------------------------------------------------------------
# public single-step operations (validated ndarray in / ndarray out)
# ---------------------------------------------------------------------------


def _require_positive_h(h):
    if not h > 0:
        raise ConfigError(f"step size must be positive, got {h}")


def _finite_or_raise(arrs, what, context):
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise EvaluationError(f"non-finite {what}", point=context)


def step_first_euler(sys: FirstOrderSystem, x, u, h) -> np.ndarray:
    """One explicit Euler step: ``x + h*flow(x, u)``."""
    _require_positive_h(h)
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.array(
        _kernel_first_rk(sys.flow, tuple(x), tuple(u), h, [[0.0]], [1.0]),
        dtype=float,
    )
    _finite_or_raise([out], "dynamics output", (x, u, h))
    return out


def step_first_rk4(sys: FirstOrderSystem, x, u, h) -> np.ndarray:
    """One classic four-stage Runge-Kutta step with the control held fixed."""
    _require_positive_h(h)
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.array(
        _kernel_first_rk(sys.flow, tuple(x), tuple(u), h, _RK4_A, _RK4_B),
        dtype=float,
    )
    _finite_or_raise([out], "dynamics output", (x, u, h))
    return out


def step_second_euler(sys: SecondOrderSystem, q, qdot, u, h):
    """Velocity-aware Euler step.

    K1 = h*accel(q, qd, u); q+ = q + h*qd + h*K1/2; qd+ = qd + K1.
    """
    _require_positive_h(h)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    qd = np.atleast_1d(np.asarray(qdot, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    q1, qd1 = _kernel_second_euler(sys.accel, tuple(q), tuple(qd), tuple(u), h)
    q1 = np.array(q1, dtype=float)
    qd1 = np.array(qd1, dtype=float)
    _finite_or_raise([q1, qd1], "dynamics output", (q, qd, u, h))
    return q1, qd1


def step_second_rk4(sys: SecondOrderSystem, q, qdot, u, h):
    """Velocity-aware four-stage step (see module docstring for the update)."""
    _require_positive_h(h)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    qd = np.atleast_1d(np.asarray(qdot, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    q1, qd1 = _kernel_second_rk4(sys.accel, tuple(q), tuple(qd), tuple(u), h)
    q1 = np.array(q1, dtype=float)
    qd1 = np.array(qd1, dtype=float)
    _finite_or_raise([q1, qd1], "dynamics output", (q, qd, u, h))
    return q1, qd1


def step_euler_order_n(sys: HighOrderSystem, derivs: Sequence, u, h) -> tuple:
    """Order-N Euler-type step.

    ``derivs`` is a sequence of the N derivative levels
    ``(q, q^(1), ..., q^(N-1))``, each of length n_q.  Returns the advanced
    levels in the same layout.  Specializes to :func:`step_second_euler`
    for N=2 and to :func:`step_first_euler` for N=1.
    """
    _require_positive_h(h)
    if len(derivs) != sys.order:
        raise DimensionMismatch(
            f"expected {sys.order} derivative levels, got {len(derivs)}"
        )
    levels = tuple(
        tuple(np.atleast_1d(np.asarray(d, dtype=float))) for d in derivs
    )
    u = tuple(np.atleast_1d(np.asarray(u, dtype=float)))
    out = _kernel_euler_order_n(sys.top_deriv, levels, u, h, sys.order)
    arrs = tuple(np.array(level, dtype=float) for level in out)
    _finite_or_raise(arrs, "dynamics output", (derivs, u, h))
    return arrs


# ---------------------------------------------------------------------------
# rollout and defect
# ---------------------------------------------------------------------------


def _split_state(x, n_q, order):
    return tuple(tuple(x[i * n_q + j] for j in range(n_q)) for i in range(order))


def _advance(sys2, high, flow, scheme, state, u, h):
    """One step on the stacked state tuple, dispatching on scheme kind."""
    kind = scheme.kind
    if kind == SchemeKind.FIRST_EULER:
        return _kernel_first_rk(flow, state, u, h, [[0.0]], [1.0])
    if kind == SchemeKind.FIRST_RK4:
        return _kernel_first_rk(flow, state, u, h, _RK4_A, _RK4_B)
    if kind == SchemeKind.SECOND_EULER:
        n_q = sys2.n_q
        q, qd = _split_state(state, n_q, 2)
        q1, qd1 = _kernel_second_euler(sys2.accel, q, qd, u, h)
        return q1 + qd1
    if kind == SchemeKind.SECOND_RK4:
        n_q = sys2.n_q
        q, qd = _split_state(state, n_q, 2)
        q1, qd1 = _kernel_second_rk4(sys2.accel, q, qd, u, h)
        return q1 + qd1
    if kind == SchemeKind.EULER_ORDER_N:
        levels = _split_state(state, high.n_q, high.order)
        out = _kernel_euler_order_n(high.top_deriv, levels, u, h, high.order)
        return tuple(c for level in out for c in level)
    raise ConfigError(f"unsupported scheme kind {kind}")


def _resolve(sys, scheme):
    """Normalize a system to (second_order, high_order, flow) views."""
    if isinstance(sys, SecondOrderSystem):
        sys2 = sys
        high = as_high_order(sys)
    elif isinstance(sys, HighOrderSystem):
        high = sys
        sys2 = as_second_order(sys) if sys.order == 2 else None
    else:
        raise ConfigError(
            f"rollout/defect need a second- or high-order system, got {type(sys).__name__}"
        )
    if scheme.kind in (SchemeKind.SECOND_EULER, SchemeKind.SECOND_RK4) and sys2 is None:
        raise ConfigError(
            f"scheme {scheme.label} requires an order-2 system, got order {high.order}"
        )
    flow = augment(high).flow
    return sys2, high, flow


def rollout(sys, scheme: Scheme, x0, controls, h) -> KnotTrajectory:
    """Apply the per-step operation N times from the stacked state ``x0``.

    ``controls`` has one row per interval; trajectory times are
    ``{0, h, ..., N*h}``.  Evaluation failures are re-raised annotated with
    the failing step index.
    """
    _require_positive_h(h)
    sys2, high, flow = _resolve(sys, scheme)
    n_q, order = high.n_q, high.order
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (order * n_q,):
        raise DimensionMismatch(
            f"initial state has shape {x0.shape}, expected ({order * n_q},)"
        )
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[:, None]
    if controls.shape[1] != high.n_u:
        raise DimensionMismatch(
            f"controls have {controls.shape[1]} columns, expected {high.n_u}"
        )
    n = controls.shape[0]
    states = np.empty((n + 1, order * n_q))
    states[0] = x0
    state = tuple(x0)
    for k in range(n):
        try:
            state = _advance(sys2, high, flow, scheme, state, tuple(controls[k]), h)
        except EvaluationError as err:
            raise EvaluationError(f"step {k}: {err}", point=err.point) from err
        arr = np.array(state, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise EvaluationError(
                f"step {k}: non-finite state", point=(np.array(states[k]), controls[k])
            )
        states[k + 1] = arr
    times = h * np.arange(n + 1)
    q = states[:, :n_q]
    derivs = states[:, n_q:].reshape(n + 1, order - 1, n_q)
    return KnotTrajectory(times=times, q=q, derivs=derivs, controls=controls.copy())


def defect(sys, scheme: Scheme, knot_k, knot_k1, u_k, h) -> np.ndarray:
    """Propagation residual: (knot k advanced one step) minus knot k+1.

    Knot values are stacked state vectors ``(q, q^(1), ...)``; the residual
    is the zero vector exactly when the scheme's propagation equation holds
    between the two knots.
    """
    _require_positive_h(h)
    sys2, high, flow = _resolve(sys, scheme)
    dim = high.order * high.n_q
    knot_k = np.asarray(knot_k, dtype=float)
    knot_k1 = np.asarray(knot_k1, dtype=float)
    if knot_k.shape != (dim,) or knot_k1.shape != (dim,):
        raise DimensionMismatch(
            f"knot states must have shape ({dim},), got {knot_k.shape}/{knot_k1.shape}"
        )
    u_k = np.atleast_1d(np.asarray(u_k, dtype=float))
    predicted = _advance(sys2, high, flow, scheme, tuple(knot_k), tuple(u_k), h)
    residual = np.array(predicted, dtype=float) - knot_k1
    if not np.all(np.isfinite(residual)):
        raise EvaluationError("non-finite defect", point=(knot_k, u_k, h))
    return residual
