"""Time-dependent test vector fields ``phi(t, x)`` with derivatives.

All evaluators are vectorised: ``t`` has shape ``(n,)`` and ``x`` shape
``(n, d)``.  ``grad`` returns ``G[:, k, m] = d phi_k / d x_m`` and ``hess``
returns ``H[:, k, m, l] = d^2 phi_k / d x_m d x_l``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "TestField",
    "Constant",
    "LinearCoordinate",
    "FourierMode",
    "GaussianEnvelope",
    "TranslatedPairPotential",
    "Sum",
    "Scaled",
    "Zero",
    "field_norm",
    "field_norm_D",
]


def _prep(t, x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, dim)
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    return t, x


class TestField:
    """Base class; subclasses implement ``value``, ``grad`` and ``hess``."""

    __test__ = False  # not a pytest class
    dim: int = 1
    rho: float = 1.0

    def value(self, t, x):
        raise NotImplementedError

    def grad(self, t, x):
        raise NotImplementedError

    def hess(self, t, x):
        raise NotImplementedError

    def div(self, t, x):
        return np.trace(self.grad(t, x), axis1=-2, axis2=-1)

    def __add__(self, other):
        return Sum([self, other])

    def __mul__(self, c):
        return Scaled(self, float(c))

    __rmul__ = __mul__


class Zero(TestField):
    def __init__(self, dim=1):
        self.dim = dim

    def value(self, t, x):
        t, x = _prep(t, x, self.dim)
        return np.zeros_like(x)

    def grad(self, t, x):
        t, x = _prep(t, x, self.dim)
        return np.zeros(x.shape + (self.dim,))

    def hess(self, t, x):
        t, x = _prep(t, x, self.dim)
        return np.zeros(x.shape + (self.dim, self.dim))


class Constant(Zero):
    def __init__(self, c):
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.dim = self.c.size

    def value(self, t, x):
        t, x = _prep(t, x, self.dim)
        return np.broadcast_to(self.c, x.shape).copy()


class LinearCoordinate(Zero):
    """``phi_k(x) = x^i`` if ``k == j`` else 0."""

    def __init__(self, i, j, dim):
        self.i, self.j, self.dim = int(i), int(j), int(dim)

    def value(self, t, x):
        t, x = _prep(t, x, self.dim)
        out = np.zeros_like(x)
        out[:, self.j] = x[:, self.i]
        return out

    def grad(self, t, x):
        g = super().grad(t, x)
        g[:, self.j, self.i] = 1.0
        return g


class FourierMode(TestField):
    """One real component of ``exp(i k.x + i w t) e_component``.

    ``part`` is ``'cos'`` or ``'sin'``.
    """

    def __init__(self, k, freq=0.0, component=0, part="cos"):
        self.k = np.atleast_1d(np.asarray(k, dtype=float))
        self.dim = self.k.size
        self.freq = float(freq)
        self.component = int(component)
        if part not in ("cos", "sin"):
            raise ValueError("part must be 'cos' or 'sin'")
        self.part = part

    def _phase(self, t, x):
        return x @ self.k + self.freq * t

    def value(self, t, x):
        t, x = _prep(t, x, self.dim)
        ph = self._phase(t, x)
        out = np.zeros_like(x)
        out[:, self.component] = np.cos(ph) if self.part == "cos" else np.sin(ph)
        return out

    def grad(self, t, x):
        t, x = _prep(t, x, self.dim)
        ph = self._phase(t, x)
        d = -np.sin(ph) if self.part == "cos" else np.cos(ph)
        g = np.zeros(x.shape + (self.dim,))
        g[:, self.component, :] = d[:, None] * self.k[None, :]
        return g

    def hess(self, t, x):
        t, x = _prep(t, x, self.dim)
        ph = self._phase(t, x)
        d2 = -np.cos(ph) if self.part == "cos" else -np.sin(ph)
        h = np.zeros(x.shape + (self.dim, self.dim))
        h[:, self.component] = d2[:, None, None] * np.outer(self.k, self.k)[None]
        return h


class GaussianEnvelope(TestField):
    """``amplitude * exp(-|x - center|^2 / (2 width^2)) * exp(-(t - t0)^2 / (2 tau^2))``.

    With ``time_width=None`` the field does not depend on time.
    """

    def __init__(self, center, width, amplitude, time_center=0.0, time_width=None):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.dim = self.center.size
        self.width = float(width)
        self.amplitude = np.broadcast_to(np.asarray(amplitude, dtype=float), (self.dim,)).copy()
        self.time_center = float(time_center)
        self.time_width = time_width

    def _scalar(self, t, x):
        y = x - self.center
        g = np.exp(-np.sum(y * y, axis=-1) / (2 * self.width ** 2))
        if self.time_width is not None:
            g = g * np.exp(-((t - self.time_center) ** 2) / (2 * self.time_width ** 2))
        return y, g

    def value(self, t, x):
        t, x = _prep(t, x, self.dim)
        _, g = self._scalar(t, x)
        return g[:, None] * self.amplitude[None, :]

    def grad(self, t, x):
        t, x = _prep(t, x, self.dim)
        y, g = self._scalar(t, x)
        dg = -y / self.width ** 2 * g[:, None]
        return self.amplitude[None, :, None] * dg[:, None, :]

    def hess(self, t, x):
        t, x = _prep(t, x, self.dim)
        y, g = self._scalar(t, x)
        w2 = self.width ** 2
        d2 = (y[:, :, None] * y[:, None, :] / w2 ** 2 - np.eye(self.dim)[None] / w2) * g[:, None, None]
        return self.amplitude[None, :, None, None] * d2[:, None, :, :]


class TranslatedPairPotential(TestField):
    """``(u, y) -> W(x0 - y, t0 - u) e_component``: the integrand behind ``w^C(x0, t0)``."""

    def __init__(self, W, x0, t0, component=0):
        self.W = W
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.dim = self.x0.size
        self.t0 = float(t0)
        self.component = int(component)

    def value(self, t, x):
        t, x = _prep(t, x, self.dim)
        out = np.zeros_like(x)
        out[:, self.component] = self.W.value(self.x0 - x, self.t0 - t)
        return out

    def grad(self, t, x):
        t, x = _prep(t, x, self.dim)
        g = np.zeros(x.shape + (self.dim,))
        g[:, self.component, :] = -self.W.grad(self.x0 - x, self.t0 - t)
        return g

    def hess(self, t, x):
        t, x = _prep(t, x, self.dim)
        h = np.zeros(x.shape + (self.dim, self.dim))
        h[:, self.component] = self.W.hess(self.x0 - x, self.t0 - t)
        return h


class Sum(TestField):
    def __init__(self, parts):
        flat = []
        for p in parts:
            flat.extend(p.parts if isinstance(p, Sum) else [p])
        if not flat:
            raise ValueError("empty sum")
        dims = {p.dim for p in flat}
        if len(dims) != 1:
            raise ValueError("dimension mismatch in field sum")
        self.parts = flat
        self.dim = flat[0].dim
        self.rho = min(p.rho for p in flat)

    def value(self, t, x):
        return sum(p.value(t, x) for p in self.parts)

    def grad(self, t, x):
        return sum(p.grad(t, x) for p in self.parts)

    def hess(self, t, x):
        return sum(p.hess(t, x) for p in self.parts)


class Scaled(TestField):
    def __init__(self, field, c):
        self.field, self.c = field, c
        self.dim, self.rho = field.dim, field.rho

    def value(self, t, x):
        return self.c * self.field.value(t, x)

    def grad(self, t, x):
        return self.c * self.field.grad(t, x)

    def hess(self, t, x):
        return self.c * self.field.hess(t, x)


def field_norm(phi, s, t, rho=None, box=3.0, n_space=9, n_time=9) -> float:
    """Lattice estimate of the ``(rho, 2)`` norm of ``phi`` on ``[s, t]``.

    Sup of ``|phi|, |grad phi|, |hess phi|`` plus the ``rho``-Hölder
    quotient in time of ``phi`` and ``grad phi``, over a lattice of
    ``n_space**d`` points in ``[-box, box]^d`` and ``n_time`` times.  It is
    a lower estimate of the true sup.
    """
    rho = phi.rho if rho is None else rho
    d = phi.dim
    axes = [np.linspace(-box, box, n_space)] * d
    xs = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    ts = np.linspace(s, t, n_time)
    vals, grads, sup = [], [], 0.0
    for u in ts:
        v = phi.value(np.full(len(xs), u), xs)
        g = phi.grad(np.full(len(xs), u), xs)
        h = phi.hess(np.full(len(xs), u), xs)
        sup = max(sup, np.abs(v).max(), np.abs(g).max(), np.abs(h).max())
        vals.append(v)
        grads.append(g)
    hol = 0.0
    for a in range(n_time):
        for b in range(a + 1, n_time):
            lag = (ts[b] - ts[a]) ** rho
            dv = np.abs(vals[b] - vals[a]).max()
            dg = np.abs(grads[b] - grads[a]).max()
            hol = max(hol, dv / lag, dg / lag)
    return float(sup + hol)


def field_norm_D(phi, alpha, k_range=(-16, 16), **kw) -> float:
    """``sup_k (1 + |k|)^alpha ||phi||_{rho,2,k,k+1}`` over integer windows in ``k_range``.

    Windows are treated independently.
    """
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    best = 0.0
    for k in range(k_range[0], k_range[1] + 1):
        best = max(best, (1 + abs(k)) ** alpha * field_norm(phi, k, k + 1, **kw))
    return best
