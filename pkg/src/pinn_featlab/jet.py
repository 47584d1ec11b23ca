"""Batched truncated Taylor arithmetic for PINN input derivatives.

A :class:`Jet` carries, for every sample point, a value together with its
first derivatives along a chosen set of input axes and its pure second
derivatives along a subset of them. Mixed partials are never needed by the
PDE suite, so they are not tracked. Propagating jets forward through the
feature map and MLP is much cheaper than nesting reverse-mode passes, and the
result stays differentiable in the parameters under :func:`jax.grad`.

Missing derivative components are stored as ``None`` and mean "identically
zero"; operations skip them.
"""
from __future__ import annotations

from typing import Callable, Iterable

import jax.numpy as jnp

__all__ = ["Jet", "seed_inputs", "unary", "concat", "stack_last"]


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _mul(a, b):
    if a is None or b is None:
        return None
    return a * b


def _map(f, a):
    return None if a is None else f(a)


class Jet:
    """Value plus first derivatives ``d[k]`` and pure second derivatives ``dd[k]``."""

    __slots__ = ("val", "d", "dd")

    def __init__(self, val, d: dict, dd: dict):
        self.val = val
        self.d = d
        self.dd = dd

    @property
    def shape(self):
        return self.val.shape

    def map_linear(self, f: Callable) -> "Jet":
        """Apply a linear map to every component (slicing, reshape, matmul...)."""
        return Jet(f(self.val), {k: _map(f, v) for k, v in self.d.items()},
                   {k: _map(f, v) for k, v in self.dd.items()})

    def __getitem__(self, idx):
        return self.map_linear(lambda a: a[idx])

    def reshape(self, *shape):
        return self.map_linear(lambda a: a.reshape(*shape))

    def sum(self, axis=None, keepdims=False):
        return self.map_linear(lambda a: a.sum(axis=axis, keepdims=keepdims))

    def __matmul__(self, w):
        return self.map_linear(lambda a: a @ w)

    def __add__(self, other):
        if isinstance(other, Jet):
            val = self.val + other.val
            d = {k: _add(self.d[k], other.d[k]) for k in self.d}
            dd = {k: _add(self.dd[k], other.dd[k]) for k in self.dd}
        else:
            val = self.val + other
            d, dd = self.d, self.dd
        # keep derivative arrays at the broadcast shape so later reshapes line up
        fit = lambda a: a if a is None or a.shape == val.shape else jnp.broadcast_to(a, val.shape)
        return Jet(val, {k: fit(v) for k, v in d.items()}, {k: fit(v) for k, v in dd.items()})

    __radd__ = __add__

    def __neg__(self):
        return self.map_linear(lambda a: -a)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b = self, other
            d = {k: _add(_mul(a.d[k], b.val), _mul(a.val, b.d[k])) for k in a.d}
            dd = {}
            for k in a.dd:
                cross = _mul(a.d[k], b.d[k])
                dd[k] = _add(_add(_mul(a.dd[k], b.val), _mul(a.val, b.dd[k])),
                             None if cross is None else 2.0 * cross)
            return Jet(a.val * b.val, d, dd)
        return self.map_linear(lambda a: a * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * reciprocal(other)
        return self.map_linear(lambda a: a / other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, p):
        if p == 1:
            return self
        if p == 2:
            return self * self
        return unary(self, lambda x: x ** p, lambda x: p * x ** (p - 1),
                     lambda x: p * (p - 1) * x ** (p - 2))


def seed_inputs(x, first: Iterable[int], second: Iterable[int] = ()) -> Jet:
    """Jet for raw coordinates ``x`` of shape (N, n), seeding unit tangents."""
    first = sorted(set(first) | set(second))
    second = sorted(set(second))
    d = {k: jnp.zeros_like(x).at[:, k].set(1.0) for k in first}
    dd = {k: None for k in second}
    return Jet(x, d, dd)


def unary(g: Jet, f, f1, f2) -> Jet:
    """Chain rule for an elementwise function with derivatives ``f1``, ``f2``."""
    x = g.val
    val = f(x)
    need1 = any(v is not None for v in g.d.values())
    d1 = f1(x) if need1 else None
    d = {k: _mul(d1, v) for k, v in g.d.items()}
    dd = {}
    if g.dd:
        d2 = f2(x)
        for k in g.dd:
            sq = _mul(g.d[k], g.d[k])
            dd[k] = _add(_mul(d1, g.dd[k]), _mul(d2, sq))
    return Jet(val, d, dd)


def reciprocal(g: Jet) -> Jet:
    return unary(g, lambda x: 1.0 / x, lambda x: -1.0 / (x * x), lambda x: 2.0 / (x * x * x))


def exp(g: Jet) -> Jet:
    e = jnp.exp(g.val)
    return unary(g, lambda x: e, lambda x: e, lambda x: e)


def sin(g: Jet) -> Jet:
    s, c = jnp.sin(g.val), jnp.cos(g.val)
    return unary(g, lambda x: s, lambda x: c, lambda x: -s)


def cos(g: Jet) -> Jet:
    s, c = jnp.sin(g.val), jnp.cos(g.val)
    return unary(g, lambda x: c, lambda x: -s, lambda x: -c)


def tanh(g: Jet) -> Jet:
    t = jnp.tanh(g.val)
    s = 1.0 - t * t
    return unary(g, lambda x: t, lambda x: s, lambda x: -2.0 * t * s)


def sqrt(g: Jet) -> Jet:
    r = jnp.sqrt(g.val)
    return unary(g, lambda x: r, lambda x: 0.5 / r, lambda x: -0.25 / (r * g.val))


def log(g: Jet) -> Jet:
    return unary(g, jnp.log, lambda x: 1.0 / x, lambda x: -1.0 / (x * x))


def absolute(g: Jet) -> Jet:
    return unary(g, jnp.abs, jnp.sign, jnp.zeros_like)


def maximum(g: Jet, s: float) -> Jet:
    return unary(g, lambda x: jnp.maximum(x, s), lambda x: jnp.where(x > s, 1.0, 0.0), jnp.zeros_like)


def concat(jets: list[Jet], axis: int = -1) -> Jet:
    """Concatenate jets; zero components are materialized only when needed."""
    def join(parts, ref):
        if all(p is None for p in parts):
            return None
        return jnp.concatenate([jnp.zeros_like(r) if p is None else p for p, r in zip(parts, ref)], axis=axis)

    vals = [j.val for j in jets]
    first = jets[0]
    d = {k: join([j.d[k] for j in jets], vals) for k in first.d}
    dd = {k: join([j.dd[k] for j in jets], vals) for k in first.dd}
    return Jet(jnp.concatenate(vals, axis=axis), d, dd)


def stack_last(jets: list[Jet]) -> Jet:
    return concat([j.map_linear(lambda a: a[..., None]) for j in jets], axis=-1)
