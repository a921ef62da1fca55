"""Control-system descriptors and benchmark dynamics.

Systems are described by their highest time derivative:

* :class:`SecondOrderSystem` -- an acceleration map ``qddot = accel(q, qdot, u)``
* :class:`HighOrderSystem`   -- a top-derivative map for order N >= 1
* :class:`FirstOrderSystem`  -- a state flow ``xdot = flow(x, u)``

All maps take and return *sequences of scalar-likes* (floats, numpy arrays,
or :class:`~shootopt.duals.Dual` numbers), one entry per coordinate.  This
keeps every model usable both for fast batched float evaluation and for
exact forward-mode differentiation with the same code.

Descriptors are frozen dataclasses: immutable after construction and safe
to share across threads.  All maps are pure functions of their arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .duals import cos, sin
from .errors import ConfigError, DimensionMismatch, EvaluationError

__all__ = [
    "SecondOrderSystem",
    "HighOrderSystem",
    "FirstOrderSystem",
    "eval_accel",
    "augment",
    "as_high_order",
    "as_second_order",
    "make_benchmark",
    "BENCHMARK_NAMES",
]


@dataclass(frozen=True)
class SecondOrderSystem:
    """Acceleration-level system ``qddot = accel(q, qdot, u)``.

    ``smoothness`` records how many times the flow is continuously
    differentiable in time (under piecewise-constant inputs); it is
    metadata for error-bound bookkeeping, not enforced.
    """

    name: str
    n_q: int
    n_u: int
    accel: Callable[[Sequence, Sequence, Sequence], tuple]
    smoothness: int = 6
    params: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class HighOrderSystem:
    """Order-N system ``q^(N) = top_deriv(q, q^(1), ..., q^(N-1), u)``.

    ``top_deriv`` takes ``derivs`` as a tuple of N coordinate tuples,
    lowest derivative first, plus the control tuple.
    """

    name: str
    order: int
    n_q: int
    n_u: int
    top_deriv: Callable[[Sequence[Sequence], Sequence], tuple]
    smoothness: int = 6

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError(f"system order must be >= 1, got {self.order}")


@dataclass(frozen=True)
class FirstOrderSystem:
    """State-space system ``xdot = flow(x, u)``."""

    name: str
    n_x: int
    n_u: int
    flow: Callable[[Sequence, Sequence], tuple]


def _check_len(label: str, got, want: int):
    if len(got) != want:
        raise DimensionMismatch(f"{label} has length {len(got)}, expected {want}")


def eval_accel(system: SecondOrderSystem, q, qdot, u) -> np.ndarray:
    """Evaluate the acceleration map at one numeric point.

    Validates dimensions against the descriptor and rejects non-finite
    output (raising :class:`EvaluationError` with the offending point).
    For batched or dual-number evaluation call ``system.accel`` directly.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    qdot = np.atleast_1d(np.asarray(qdot, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    _check_len("q", q, system.n_q)
    _check_len("qdot", qdot, system.n_q)
    _check_len("u", u, system.n_u)
    out = np.asarray(system.accel(tuple(q), tuple(qdot), tuple(u)), dtype=float)
    if out.shape != (system.n_q,):
        raise DimensionMismatch(
            f"accel returned shape {out.shape}, expected ({system.n_q},)"
        )
    if not np.all(np.isfinite(out)):
        raise EvaluationError(
            f"non-finite acceleration from system '{system.name}'",
            point=(q.copy(), qdot.copy(), u.copy()),
        )
    return out


def as_high_order(system: SecondOrderSystem) -> HighOrderSystem:
    """View a second-order system as an order-2 high-order system."""

    def top(derivs, u):
        return system.accel(derivs[0], derivs[1], u)

    return HighOrderSystem(
        name=system.name,
        order=2,
        n_q=system.n_q,
        n_u=system.n_u,
        top_deriv=top,
        smoothness=system.smoothness,
    )


def as_second_order(system: HighOrderSystem) -> SecondOrderSystem:
    """Inverse of :func:`as_high_order`; requires order 2."""
    if system.order != 2:
        raise ConfigError(f"system '{system.name}' has order {system.order}, not 2")

    def accel(q, qdot, u):
        return system.top_deriv((q, qdot), u)

    return SecondOrderSystem(
        name=system.name,
        n_q=system.n_q,
        n_u=system.n_u,
        accel=accel,
        smoothness=system.smoothness,
    )


def augment(system: HighOrderSystem | SecondOrderSystem) -> FirstOrderSystem:
    """Stack derivative blocks into one first-order state flow.

    State layout is ``x = (q, q^(1), ..., q^(N-1))`` with blocks contiguous,
    lowest derivative first; the returned flow stacks
    ``(q^(1), ..., q^(N-1), top_deriv)`` in that order.
    """
    if isinstance(system, SecondOrderSystem):
        system = as_high_order(system)
    n_q, order = system.n_q, system.order

    def flow(x, u):
        derivs = tuple(
            tuple(x[i * n_q + j] for j in range(n_q)) for i in range(order)
        )
        top = tuple(system.top_deriv(derivs, u))
        out = []
        for i in range(1, order):
            out.extend(derivs[i])
        out.extend(top)
        return tuple(out)

    return FirstOrderSystem(
        name=system.name, n_x=order * n_q, n_u=system.n_u, flow=flow
    )


# ---------------------------------------------------------------------------
# benchmark systems
#
# Parameters below are standard textbook values, overridable through the
# ``params`` mapping so a result is reproducible from its config file alone.
# ---------------------------------------------------------------------------

_BLOCK_DEFAULTS: dict[str, float] = {}
_CARTPOLE_DEFAULTS = {
    "cart_mass": 1.0,
    "pole_mass": 0.3,
    "pole_length": 0.5,
    "gravity": 9.81,
}
_ACROBOT_DEFAULTS = {
    "m1": 1.0,
    "m2": 1.0,
    "l1": 1.0,
    "l2": 1.0,
    "I1": 1.0 / 12.0,
    "I2": 1.0 / 12.0,
    "gravity": 9.81,
}
_QUAD1D_DEFAULTS = {"mass": 1.0, "gravity": 9.81}
_QUAD2D_DEFAULTS = {"mass": 1.0, "inertia": 0.01, "arm": 0.2, "gravity": 9.81}


def _block(p):
    def accel(q, qdot, u):
        return (u[0],)

    return SecondOrderSystem("block", 1, 1, accel, smoothness=10, params=p)


def _quadrotor1d(p):
    m, g = p["mass"], p["gravity"]

    def accel(q, qdot, u):
        return (u[0] / m - g,)

    return SecondOrderSystem("quadrotor1d", 1, 1, accel, smoothness=10, params=p)


def _cartpole(p):
    # Frictionless cart with a point-mass pole; angle measured from the
    # downward vertical so q = (0, 0) at rest is an equilibrium.
    mc, mp = p["cart_mass"], p["pole_mass"]
    length, g = p["pole_length"], p["gravity"]

    def accel(q, qdot, u):
        th = q[1]
        pd, thd = qdot
        f = u[0]
        s, c = sin(th), cos(th)
        denom = mc + mp * s * s
        pdd = (f + mp * s * (length * thd * thd + g * c)) / denom
        thdd = -(c * pdd + g * s) / length
        return (pdd, thdd)

    return SecondOrderSystem("cartpole", 2, 1, accel, smoothness=6, params=p)


def _acrobot(p):
    # Two-link pendulum, torque at the elbow only.  Shoulder angle from the
    # downward vertical, elbow angle relative to the first link.  Centers of
    # mass at mid-link.
    m1, m2 = p["m1"], p["m2"]
    l1 = p["l1"]
    lc1, lc2 = p["l1"] / 2.0, p["l2"] / 2.0
    i1, i2 = p["I1"], p["I2"]
    g = p["gravity"]

    def accel(q, qdot, u):
        th1, th2 = q
        w1, w2 = qdot
        tau = u[0]
        s2, c2 = sin(th2), cos(th2)
        m11 = m1 * lc1**2 + i1 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * c2) + i2
        m12 = m2 * (lc2**2 + l1 * lc2 * c2) + i2
        m22 = m2 * lc2**2 + i2
        hh = m2 * l1 * lc2 * s2
        c1 = -hh * w2 * w2 - 2 * hh * w1 * w2
        c2v = hh * w1 * w1
        g1 = (m1 * lc1 + m2 * l1) * g * sin(th1) + m2 * lc2 * g * sin(th1 + th2)
        g2 = m2 * lc2 * g * sin(th1 + th2)
        r1 = -c1 - g1
        r2 = tau - c2v - g2
        det = m11 * m22 - m12 * m12
        a1 = (m22 * r1 - m12 * r2) / det
        a2 = (m11 * r2 - m12 * r1) / det
        return (a1, a2)

    return SecondOrderSystem("acrobot", 2, 1, accel, smoothness=6, params=p)


def _quadrotor2d(p):
    # Planar quadrotor: configuration (horizontal, vertical, tilt), inputs
    # are the two rotor thrusts; positive tilt torque from the first rotor.
    m, inertia = p["mass"], p["inertia"]
    arm, g = p["arm"], p["gravity"]

    def accel(q, qdot, u):
        phi = q[2]
        u1, u2 = u
        thrust = u1 + u2
        return (
            -thrust * sin(phi) / m,
            thrust * cos(phi) / m - g,
            arm * (u1 - u2) / inertia,
        )

    return SecondOrderSystem("quadrotor2d", 3, 2, accel, smoothness=6, params=p)


_BENCHMARKS = {
    "block": (_block, _BLOCK_DEFAULTS),
    "cartpole": (_cartpole, _CARTPOLE_DEFAULTS),
    "acrobot": (_acrobot, _ACROBOT_DEFAULTS),
    "quadrotor1d": (_quadrotor1d, _QUAD1D_DEFAULTS),
    "quadrotor2d": (_quadrotor2d, _QUAD2D_DEFAULTS),
}

BENCHMARK_NAMES = tuple(sorted(_BENCHMARKS))


def make_benchmark(name: str, params: Mapping[str, float] | None = None) -> SecondOrderSystem:
    """Build a named benchmark system, with optional parameter overrides.

    Unknown names and unknown parameter keys raise :class:`ConfigError`.
    """
    if name not in _BENCHMARKS:
        raise ConfigError(
            f"unknown benchmark '{name}'; valid names: {', '.join(BENCHMARK_NAMES)}"
        )
    builder, defaults = _BENCHMARKS[name]
    merged = dict(defaults)
    for key, val in (params or {}).items():
        if key not in defaults:
            raise ConfigError(
                f"unknown parameter '{key}' for benchmark '{name}'; "
                f"valid keys: {', '.join(sorted(defaults)) or '(none)'}"
            )
        merged[key] = float(val)
    return builder(merged)
