"""Forward-mode dual numbers over numpy arrays.

A :class:`Dual` carries a value ``val`` of arbitrary array shape ``S`` and a
derivative block ``dot`` of shape ``S + (D,)`` holding D directional
derivatives at once.  All arithmetic propagates both parts, so any function
written in terms of ``+ - * / **`` and the math wrappers below is
differentiated exactly (to machine precision) by evaluating it once on
seeded inputs.

Plain floats and ndarrays mix freely with Duals and are treated as
constants.  Dynamics and residual callbacks throughout the package are
written against this generic scalar so the same code serves fast float
evaluation and exact differentiation.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Dual", "seed", "value", "sin", "cos", "exp", "sqrt", "concat"]


def _dotify(v, dot):
    # lift a constant value into the dot-array broadcast shape
    if np.ndim(v) == 0:
        return v * dot
    return np.asarray(v)[..., None] * dot


class Dual:
    """Value plus D directional derivatives; shapes val: S, dot: S + (D,)."""

    __slots__ = ("val", "dot")

    # force ndarray <op> Dual to defer to the reflected Dual ops instead of
    # numpy trying to coerce the Dual elementwise
    __array_ufunc__ = None

    def __init__(self, val, dot):
        self.val = val
        self.dot = dot

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, _keep(self.dot, np.shape(self.val + other)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.dot - other.dot)
        return Dual(self.val - other, _keep(self.dot, np.shape(self.val - other)))

    def __rsub__(self, other):
        return Dual(other - self.val, _keep(-self.dot, np.shape(other - self.val)))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                _dotify(self.val, other.dot) + _dotify(other.val, self.dot),
            )
        return Dual(self.val * other, _dotify(other, self.dot))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            return Dual(val, _dotify(inv, self.dot) - _dotify(val * inv, other.dot))
        inv = 1.0 / other
        return Dual(self.val * inv, _dotify(inv, self.dot))

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, _dotify(-val * inv, self.dot))

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("dual exponents are not supported")
        return Dual(self.val**p, _dotify(p * self.val ** (p - 1), self.dot))

    # -- array-like ------------------------------------------------------

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.dot[idx])

    @property
    def shape(self):
        return np.shape(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r})"


def _keep(dot, val_shape):
    # dot must broadcast against val_shape + (D,); expand lazily when a
    # scalar Dual meets an array constant
    want = tuple(val_shape) + (dot.shape[-1],)
    if dot.shape != want:
        return np.broadcast_to(dot, want)
    return dot


def seed(x):
    """Wrap a flat point ``x`` so each entry carries its own unit direction."""
    x = np.asarray(x, dtype=float)
    return Dual(x, np.eye(x.size))


def value(x):
    """Value part of a Dual, or ``x`` unchanged for plain numerics."""
    return x.val if isinstance(x, Dual) else x


# -- math wrappers dispatching on scalar kind ----------------------------


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), _dotify(np.cos(x.val), x.dot))
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), _dotify(-np.sin(x.val), x.dot))
    return np.cos(x)


def exp(x):
    if isinstance(x, Dual):
        v = np.exp(x.val)
        return Dual(v, _dotify(v, x.dot))
    return np.exp(x)


def sqrt(x):
    if isinstance(x, Dual):
        v = np.sqrt(x.val)
        return Dual(v, _dotify(0.5 / v, x.dot))
    return np.sqrt(x)


def concat(parts, n_dirs=None):
    """Concatenate 1-D scalar-likes into one vector, promoting to Dual
    when any part carries derivatives."""
    if not any(isinstance(p, Dual) for p in parts):
        return np.concatenate([np.atleast_1d(np.asarray(p, float)) for p in parts])
    if n_dirs is None:
        n_dirs = next(p.dot.shape[-1] for p in parts if isinstance(p, Dual))
    vals, dots = [], []
    for p in parts:
        if isinstance(p, Dual):
            v = np.atleast_1d(np.asarray(p.val, float))
            d = np.broadcast_to(p.dot, v.shape + (n_dirs,))
        else:
            v = np.atleast_1d(np.asarray(p, float))
            d = np.zeros(v.shape + (n_dirs,))
        vals.append(v)
        dots.append(d)
    return Dual(np.concatenate(vals), np.concatenate(dots, axis=0))
