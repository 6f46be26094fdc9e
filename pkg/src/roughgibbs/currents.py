"""Stochastic currents backed by lifted grid paths.

A current ``C`` maps a test field ``phi`` to ``C_st(phi) = int_s^t phi(u, X_u) . dX_u``,
evaluated as the compensated Riemann sum of the backing lift.  This module
adds boundary currents made of unit windows, the induced interaction field

    w^C(x, t) = C(W(x - ., t - .)),

and the Fourier pairing ``<a, b>_W`` of two currents.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, zeta

from .brownian import n_functional
from .fields import TestField, field_norm
from .rough import Step2RoughPath, _area, rough_integral

__all__ = [
    "GridCurrent",
    "BoundaryCurrent",
    "FieldNormConfig",
    "BoundaryEvaluation",
    "QuadratureConfig",
    "PairingResult",
    "evaluate",
    "boundary_evaluate",
    "InducedField",
    "w_field",
    "boundary_interaction",
    "fourier_transform",
    "pair_w",
    "write_evaluation_table",
]


@dataclass(frozen=True, eq=False)
class GridCurrent:
    """Current of a lifted path, optionally scaled by ``weight``.

    Scaling the current by ``c`` is the same as scaling the backing
    increments (and the areas quadratically in the path, linearly in the
    current) by ``c``; it exists so that bilinearity can be tested directly.
    """

    backing: Step2RoughPath
    support: tuple | None = None
    weight: float = 1.0

    def __post_init__(self):
        s0, t0 = self.backing.base.interval
        sup = (s0, t0) if self.support is None else tuple(float(v) for v in self.support)
        if not (s0 - 1e-12 <= sup[0] <= sup[1] <= t0 + 1e-12):
            raise ValueError("support must lie inside the backing interval")
        object.__setattr__(self, "support", sup)

    @property
    def dim(self) -> int:
        return self.backing.dim

    def steps(self):
        """Step indices ``a, b`` of the support on the backing grid."""
        base = self.backing.base
        return base.index_of(self.support[0]), base.index_of(self.support[1])


def evaluate(c: GridCurrent, phi: TestField, s=None, t=None) -> float:
    """``C_st(phi)`` for grid times ``s <= t`` inside the support."""
    s = c.support[0] if s is None else float(s)
    t = c.support[1] if t is None else float(t)
    if not (c.support[0] - 1e-12 <= s <= t <= c.support[1] + 1e-12):
        raise ValueError(f"[{s}, {t}] is not inside the support {c.support}")
    base = c.backing.base
    return c.weight * rough_integral(c.backing, phi, base.index_of(s), base.index_of(t))


@dataclass(frozen=True)
class FieldNormConfig:
    """Settings for the lattice estimate of ``||phi||_{rho,2}`` and ``||phi||_{D_alpha}``."""

    alpha: float = 2.0
    rho: float = 1.0
    n_space: int = 9
    n_time: int = 5

    def __post_init__(self):
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")


@dataclass(frozen=True, eq=False)
class BoundaryCurrent:
    """Current over a run of windows on one side of an inner interval.

    ``windows`` is a list of ``(i, lift)`` where ``lift`` lives on
    ``[i, i+1]`` (any grid interval is accepted; ``i`` labels its weight).
    """

    windows: tuple
    side: str = "plus"
    alpha: float = 2.0
    gamma: float = 0.4

    def __post_init__(self):
        if self.side not in ("plus", "minus"):
            raise ValueError("side must be 'plus' or 'minus'")
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")
        wins = tuple((int(i), rp) for i, rp in self.windows)
        if not wins:
            raise ValueError("empty window list")
        object.__setattr__(self, "windows", wins)

    @property
    def span(self) -> tuple:
        lo = min(rp.base.interval[0] for _, rp in self.windows)
        hi = max(rp.base.interval[1] for _, rp in self.windows)
        return lo, hi

    @property
    def dim(self) -> int:
        return self.windows[0][1].dim

    def n_values(self) -> np.ndarray:
        return np.array([n_functional(rp, None, self.gamma).value for _, rp in self.windows])

    def tail_weight(self) -> float:
        """``sum (1 + |i|)**-alpha`` over indices beyond the stored windows on this side."""
        ks = [i for i, _ in self.windows]
        if self.side == "plus":
            return _half_line_weight(max(ks) + 1, +1, self.alpha)
        return _half_line_weight(min(ks) - 1, -1, self.alpha)


def _half_line_weight(first: int, direction: int, alpha: float) -> float:
    """``sum_{i = first, first + direction, ...} (1 + |i|)**-alpha``."""
    if direction < 0:
        return _half_line_weight(-first, +1, alpha)
    if first >= 0:
        return float(zeta(alpha, first + 1.0))
    # indices first..-1 then 0, 1, ...
    head = sum((1.0 + abs(i)) ** (-alpha) for i in range(first, 0))
    return head + float(zeta(alpha, 1.0))


@dataclass(frozen=True)
class BoundaryEvaluation:
    value: float
    tail_bound: float
    norm_D: float
    violations: list = field(default_factory=list)


def boundary_evaluate(bc: BoundaryCurrent, phi: TestField, norm: FieldNormConfig | None = None) -> BoundaryEvaluation:
    """Sum of the window integrals with a bound on the omitted windows.

    The tail bound is ``||phi||_D * sum_{omitted} (1 + |i|)**-alpha * (1 + max N)**3``.
    Each window is also checked against ``(1 + |i|)**-alpha ||phi||_D (1 + N_i)**3``;
    ``violations`` lists ``(i, |integral|, bound)`` for windows exceeding it.
    """
    norm = norm or FieldNormConfig(alpha=bc.alpha)
    vals = np.array([rough_integral(rp, phi) for _, rp in bc.windows])
    box = max(float(np.abs(rp.base.values).max()) for _, rp in bc.windows) + 1.0
    norms = [field_norm(phi, *rp.base.interval, rho=norm.rho, box=box,
                        n_space=norm.n_space, n_time=norm.n_time) for _, rp in bc.windows]
    norm_D = max((1.0 + abs(i)) ** bc.alpha * nv for (i, _), nv in zip(bc.windows, norms))
    nvals = bc.n_values()
    violations = []
    for (i, _), v, nv in zip(bc.windows, vals, nvals):
        bound = (1.0 + abs(i)) ** (-bc.alpha) * norm_D * (1.0 + nv) ** 3
        if abs(v) > bound:
            violations.append((i, float(abs(v)), float(bound)))
    tail = norm_D * bc.tail_weight() * (1.0 + float(nvals.max())) ** 3
    return BoundaryEvaluation(float(np.sum(vals)), float(tail), float(norm_D), violations)


# ---------------------------------------------------------------------------
# induced field w^C


def _backings(c):
    """Flatten a current (or list of currents) to ``(lift, a, b, weight)`` pieces."""
    if isinstance(c, (list, tuple)):
        out = []
        for item in c:
            out.extend(_backings(item))
        return out
    if isinstance(c, GridCurrent):
        a, b = c.steps()
        return [(c.backing, a, b, c.weight)]
    if isinstance(c, BoundaryCurrent):
        return [(rp, 0, rp.n, 1.0) for _, rp in c.windows]
    if isinstance(c, Step2RoughPath):
        return [(c, 0, c.n, 1.0)]
    raise TypeError(f"cannot read a current from {type(c).__name__}")


class InducedField(TestField):
    """``w^C(x, t) = C(W(x - ., t - .))`` with derivatives taken under the current.

    Component ``c`` of the field is the current applied to the vector field
    ``(u, y) -> W(x - y, t - u) e_c``.  Its compensated sum uses the spatial
    gradient ``-grad W``; the gradient and Hessian of ``w`` use ``grad W``,
    ``hess W`` and the third derivatives.
    """

    chunk = 256

    def __init__(self, current, W):
        for name in ("value", "grad", "hess", "third"):
            if not hasattr(W, name):
                raise TypeError(f"pair potential lacks the {name!r} derivative")
        self.pieces = []
        for rp, a, b, wgt in _backings(current):
            if b <= a:
                continue
            k = np.arange(a, b)
            x = rp.base.values
            self.pieces.append((rp.times[k], x[k], x[k + 1] - x[k], _area(rp, k, k + 1), wgt))
        dims = {p[1].shape[1] for p in self.pieces} or {getattr(W, "dim", 1)}
        if len(dims) != 1:
            raise ValueError("currents of different dimension")
        self.dim = dims.pop()
        self.W = W
        self.rho = 1.0

    def _eval(self, t, x, order):
        t = np.broadcast_to(np.asarray(t, dtype=float), (np.asarray(x).reshape(-1, self.dim).shape[0],))
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        d = self.dim
        shape = {0: (d,), 1: (d, d), 2: (d, d, d)}[order]
        out = np.zeros((len(x),) + shape)
        for lo in range(0, len(x), self.chunk):
            xs, ts = x[lo:lo + self.chunk], t[lo:lo + self.chunk]
            acc = np.zeros((len(xs),) + shape)
            for tj, xj, dx, ar, wgt in self.pieces:
                r = xs[:, None, :] - xj[None, :, :]
                s = ts[:, None] - tj[None, :]
                if order == 0:
                    f0 = self.W.value(r, s)
                    f1 = self.W.grad(r, s)
                    acc += wgt * (f0 @ dx - np.einsum("pnm,nmc->pc", f1, ar))
                elif order == 1:
                    f1 = self.W.grad(r, s)
                    f2 = self.W.hess(r, s)
                    acc += wgt * (np.einsum("pnl,nc->pcl", f1, dx) - np.einsum("pnml,nmc->pcl", f2, ar))
                else:
                    f2 = self.W.hess(r, s)
                    f3 = self.W.third(r, s)
                    acc += wgt * (np.einsum("pnlk,nc->pclk", f2, dx) - np.einsum("pnmlk,nmc->pclk", f3, ar))
            out[lo:lo + self.chunk] = acc
        return out

    def value(self, t, x):
        return self._eval(t, x, 0)

    def grad(self, t, x):
        return self._eval(t, x, 1)

    def hess(self, t, x):
        return self._eval(t, x, 2)


def w_field(c, W) -> InducedField:
    """Interaction field induced by a current (or a list of currents)."""
    return InducedField(c, W)


def boundary_interaction(rp: Step2RoughPath, bc, W, interval=None) -> float:
    """``int_I w^{C_Y}(t, X_t) . dX_t`` for boundary currents ``bc`` on the correct sides."""
    base = rp.base
    s, t = base.interval if interval is None else interval
    bcs = list(bc) if isinstance(bc, (list, tuple)) else [bc]
    for b in bcs:
        lo, hi = b.span
        if b.side == "minus" and hi > s + 1e-12:
            raise ValueError("a 'minus' boundary current must end before the interval starts")
        if b.side == "plus" and lo < t - 1e-12:
            raise ValueError("a 'plus' boundary current must start after the interval ends")
    w = w_field(bcs, W)
    return rough_integral(rp, w, base.index_of(s), base.index_of(t))


# ---------------------------------------------------------------------------
# Fourier pairing


@dataclass(frozen=True)
class QuadratureConfig:
    """Box and resolution for the ``(k, w)`` quadrature of ``<a, b>_W``.

    The spatial box is ``|k_i| <= k_sigmas / sigma`` with ``n_k`` points per
    axis.  The frequency box is ``|w| <= w_ells / ell``; its spacing is
    chosen so that the implied time period exceeds the time span of the
    currents by ``margin_ells * ell`` (the periodic images of the kernel
    are then below ``exp(-margin_ells)``).
    """

    k_sigmas: float = 6.0
    n_k: int = 64
    w_ells: float = 400.0
    margin_ells: float = 30.0
    max_w_points: int = 20001

    def __post_init__(self):
        if self.k_sigmas <= 0 or self.n_k < 2 or self.w_ells <= 0 or self.margin_ells <= 0:
            raise ValueError("degenerate quadrature box")


def _trap_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def fourier_transform(c, kpts, wpts) -> np.ndarray:
    """``C(psi_{k,w} e_c)`` for every ``k`` in ``kpts`` (shape ``(K, d)``) and ``w`` in ``wpts``.

    Returns a complex array of shape ``(K, len(wpts), d)``; ``psi`` is
    ``exp(i k.x + i w t)``.
    """
    kpts = np.asarray(kpts, dtype=float)
    out = np.zeros((len(kpts), len(wpts), kpts.shape[1]), dtype=complex)
    for rp, a, b, wgt in _backings(c):
        if b <= a:
            continue
        k = np.arange(a, b)
        x = rp.base.values
        xl, dx, ar = x[k], x[k + 1] - x[k], _area(rp, k, k + 1)
        E = np.exp(1j * (kpts @ xl.T))                      # (K, n)
        T = np.exp(1j * np.outer(rp.times[k], wpts))        # (n, Wn)
        for comp in range(kpts.shape[1]):
            # psi dX^c + sum_m (i k_m psi) XX^{mc}
            direct = E * dx[:, comp][None, :]
            comp_term = 1j * E * (kpts @ ar[:, :, comp].T)
            out[:, :, comp] += wgt * ((direct + comp_term) @ T)
    return out


@dataclass(frozen=True)
class PairingResult:
    value: float
    tail_estimate: float
    n_k: int
    n_w: int


def _time_span(*currents):
    lo, hi = math.inf, -math.inf
    for c in currents:
        for rp, a, b, _ in _backings(c):
            lo = min(lo, rp.times[a])
            hi = max(hi, rp.times[b])
    return hi - lo


def pair_w(a, b, W, quad: QuadratureConfig | None = None, full: bool = False):
    """``<a, b>_W = (2 pi)^-(d+1) int W^(k, w) Re[a(psi) conj b(psi)] dk dw``.

    Trapezoid quadrature on a truncated box.  With ``full=True`` a
    :class:`PairingResult` is returned that also carries an estimate of the
    mass outside the box (mean integrand on the box boundary times the
    kernel mass outside).
    """
    quad = quad or QuadratureConfig()
    d = W.dim
    kmax = quad.k_sigmas / W.sigma
    k1 = np.linspace(-kmax, kmax, quad.n_k)
    hk = k1[1] - k1[0]
    grids = np.meshgrid(*([k1] * d), indexing="ij")
    kpts = np.stack([g.ravel() for g in grids], axis=-1)
    wk = np.prod(np.stack(np.meshgrid(*([_trap_weights(quad.n_k, hk)] * d), indexing="ij")), axis=0).ravel()

    wmax = quad.w_ells / W.ell
    period = _time_span(a, b) + quad.margin_ells * W.ell
    hw = 2 * math.pi / period
    n_w = 2 * int(math.ceil(wmax / hw)) + 1
    if n_w > quad.max_w_points:
        raise ValueError(f"frequency grid of {n_w} points exceeds max_w_points")
    wpts = np.linspace(-wmax, wmax, n_w)
    hw = wpts[1] - wpts[0]
    ww = _trap_weights(n_w, hw)

    Fa = fourier_transform(a, kpts, wpts)
    Fb = Fa if b is a else fourier_transform(b, kpts, wpts)
    integrand = np.real(np.sum(Fa * np.conj(Fb), axis=-1))  # (K, Wn)
    kern = W.fourier(kpts[:, None, :], wpts[None, :])
    norm = (2 * math.pi) ** (-(d + 1))
    value = norm * float(np.sum(kern * integrand * wk[:, None] * ww[None, :]))
    if not full:
        return value

    # mass of the kernel outside the box, times a typical boundary integrand
    edge = np.abs(np.concatenate([integrand[:, 0], integrand[:, -1]])).mean()
    spatial_mass = W.A * (2 * math.pi) ** d  # int over k of the spatial factor
    inside_k = erf(kmax * W.sigma / math.sqrt(2)) ** d
    lorentz_out = 2 * W.ell * (math.pi - 2 * math.atan(W.ell * wmax)) / W.ell
    lorentz_total = 2 * math.pi
    out_mass = spatial_mass * (lorentz_total * (1 - inside_k) + inside_k * lorentz_out)
    tail = norm * float(edge) * out_mass
    return PairingResult(value, tail, len(kpts), n_w)


def write_evaluation_table(rows, path) -> None:
    """Write ``(family, s, t, value)`` rows as CSV with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "s", "t", "value"])
        for fam, s, t, v in rows:
            w.writerow([fam, "%.17g" % s, "%.17g" % t, "%.17g" % v])
