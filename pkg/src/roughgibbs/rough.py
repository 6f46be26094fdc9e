"""Step-2 rough paths on dyadic grids.

A :class:`GridPath` holds samples of a path on ``2**level`` uniform steps.
Lifting it gives a :class:`Step2RoughPath` whose area tensor

    A[a, b]^{ij} = sum_{a <= k < b} (X_k - X_a)^i (X_{k+1} - X_k)^j

(or a variant, depending on the scheme) is available for any pair of grid
indices in O(1) through prefix sums.  Rough integrals are compensated
Riemann sums evaluated on the finest grid.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Scheme",
    "GridPath",
    "Step2RoughPath",
    "HolderNorm",
    "lift",
    "area_query",
    "area_matrix",
    "rough_integral",
    "linear_integral_closed_form",
    "dyadic_convergence_profile",
    "holder_norm",
    "grr_bound",
    "grr_components",
    "ito_strat_defect",
    "chen_defect_max",
    "subsample",
    "linear_path",
]

EXACT_PAIRS_LIMIT = 4096


class Scheme(str, enum.Enum):
    ITO = "ito"
    STRAT_EXACT = "strat_exact"
    STRAT_TRAPEZOID = "strat_trapezoid"


@dataclass(frozen=True, eq=False)
class GridPath:
    """Path values on ``n = 2**level`` uniform steps of ``interval``.

    ``values`` has shape ``(n + 1, dim)``.
    """

    interval: tuple
    level: int
    values: np.ndarray

    def __post_init__(self):
        s, t = (float(v) for v in self.interval)
        if not s < t:
            raise ValueError(f"interval must satisfy s < t, got {self.interval}")
        if self.level < 0:
            raise ValueError("level must be nonnegative")
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        n = 2 ** int(self.level)
        if vals.shape[0] != n + 1:
            raise ValueError(f"expected {n + 1} points for level {self.level}, got {vals.shape[0]}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "interval", (s, t))
        object.__setattr__(self, "level", int(self.level))
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return 2 ** self.level

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return (self.interval[1] - self.interval[0]) / self.n

    @property
    def times(self) -> np.ndarray:
        s, t = self.interval
        return s + self.dt * np.arange(self.n + 1)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        x = (t - self.interval[0]) / self.dt
        k = int(round(x))
        if abs(x - k) > 1e-9 or not 0 <= k <= self.n:
            raise ValueError(f"time {t} is not a grid point of {self.interval} at level {self.level}")
        return k

    def shifted(self, a) -> "GridPath":
        return GridPath(self.interval, self.level, self.values + np.asarray(a, dtype=float))


def linear_path(interval, level, slope=1.0, start=0.0) -> GridPath:
    s, t = interval
    n = 2 ** level
    u = np.linspace(s, t, n + 1)
    slope = np.atleast_1d(np.asarray(slope, dtype=float))
    return GridPath((s, t), level, np.asarray(start, dtype=float) + (u - s)[:, None] * slope[None, :])


def subsample(path: GridPath, level: int) -> GridPath:
    """Restrict a path to the coarser dyadic grid of depth ``level``."""
    if level > path.level:
        raise ValueError("cannot subsample to a finer level")
    stride = 2 ** (path.level - level)
    return GridPath(path.interval, level, path.values[::stride])


@dataclass(frozen=True, eq=False)
class Step2RoughPath:
    """A grid path with its area tensor stored as prefix sums."""

    base: GridPath
    area_prefix: np.ndarray
    scheme: Scheme

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def times(self) -> np.ndarray:
        return self.base.times

    def area(self, a, b) -> np.ndarray:
        return area_query(self, a, b)

    def step_areas(self, a: int = 0, b: int | None = None) -> np.ndarray:
        """Areas over single steps ``[k, k+1]`` for ``a <= k < b``."""
        b = self.n if b is None else b
        k = np.arange(a, b)
        return _area(self, k, k + 1)


def lift(path: GridPath, scheme=Scheme.ITO) -> Step2RoughPath:
    scheme = Scheme(scheme)
    x = path.values
    dx = np.diff(x, axis=0)
    if scheme is Scheme.STRAT_TRAPEZOID:
        left = 0.5 * (x[:-1] + x[1:])
    else:
        left = x[:-1]
    terms = left[:, :, None] * dx[:, None, :]
    prefix = np.zeros((path.n + 1, path.dim, path.dim))
    np.cumsum(terms, axis=0, out=prefix[1:])
    prefix.setflags(write=False)
    return Step2RoughPath(path, prefix, scheme)


def _area(rp: Step2RoughPath, a, b) -> np.ndarray:
    x = rp.base.values
    a = np.asarray(a)
    b = np.asarray(b)
    out = (rp.area_prefix[b] - rp.area_prefix[a]) - x[a][..., :, None] * (x[b] - x[a])[..., None, :]
    if rp.scheme is Scheme.STRAT_EXACT:
        out = out + 0.5 * rp.base.dt * (b - a)[..., None, None] * np.eye(rp.dim)
    return out


def area_query(rp: Step2RoughPath, a: int, b: int) -> np.ndarray:
    """Area tensor between grid indices ``a <= b``."""
    if not (0 <= a <= b <= rp.n):
        raise IndexError(f"grid indices must satisfy 0 <= a <= b <= {rp.n}, got ({a}, {b})")
    if a == b:
        return np.zeros((rp.dim, rp.dim))
    return _area(rp, a, b)


def area_matrix(rp: Step2RoughPath, stride: int = 1) -> np.ndarray:
    """All areas ``A[p, q]`` between grid points ``p*stride`` and ``q*stride`` (p <= q).

    Entries below the diagonal are zero.
    """
    idx = np.arange(0, rp.n + 1, stride)
    m = len(idx)
    out = np.zeros((m, m, rp.dim, rp.dim))
    for h in range(1, m):
        out[np.arange(m - h), np.arange(h, m)] = _area(rp, idx[:-h], idx[h:])
    return out


def _resolve(rp, a, b):
    a = 0 if a is None else int(a)
    b = rp.n if b is None else int(b)
    if not (0 <= a <= b <= rp.n):
        raise IndexError(f"grid indices must satisfy 0 <= a <= b <= {rp.n}, got ({a}, {b})")
    return a, b


def _compensated_terms(rp, phi, idx_left, idx_right, areas=None):
    x = rp.base.values
    t = rp.times[idx_left]
    xl = x[idx_left]
    inc = x[idx_right] - xl
    if areas is None:
        areas = _area(rp, idx_left, idx_right)
    val = phi.value(t, xl)
    grad = phi.grad(t, xl)  # grad[:, k, m] = d_m phi_k
    # sum_{k,m} d_m phi_k A^{mk}: with phi_k(x) = x^i delta_kj this gives A^{ij}
    return np.einsum("nk,nk->n", val, inc) + np.einsum("nkm,nmk->n", grad, areas)


def rough_integral(rp: Step2RoughPath, phi, a: int | None = None, b: int | None = None) -> float:
    """Compensated Riemann sum of ``phi`` over grid steps ``a..b`` on the finest grid."""
    a, b = _resolve(rp, a, b)
    if a == b:
        return 0.0
    k = np.arange(a, b)
    return float(np.sum(_compensated_terms(rp, phi, k, k + 1)))


def linear_integral_closed_form(rp: Step2RoughPath, i: int, j: int, a: int | None = None,
                                b: int | None = None) -> float:
    """``X_a^i (X_b - X_a)^j + A[a, b]^{ij}``: the integral of ``x^i dX^j`` between grid points."""
    a, b = _resolve(rp, a, b)
    x = rp.base.values
    return float(x[a, i] * (x[b, j] - x[a, j]) + area_query(rp, a, b)[i, j])


def _coarse_sum(rp, phi, a, b, stride):
    pts = np.arange(a, b + 1, stride)
    if pts[-1] != b:
        raise ValueError("interval endpoints must lie on the coarse grid")
    return float(np.sum(_compensated_terms(rp, phi, pts[:-1], pts[1:])))


def dyadic_convergence_profile(rp: Step2RoughPath, phi, levels, a=None, b=None) -> list:
    """Successive differences ``|S_L - S_{L-1}|`` of compensated sums.

    The sum at level ``L`` uses grid points of stride ``2**(rp.level - L)``
    and areas recombined from the finest grid.
    """
    levels = sorted(int(v) for v in levels)
    if len(levels) < 2:
        raise ValueError("need at least two levels")
    if levels[-1] > rp.base.level:
        raise ValueError("requested level finer than the sampled path")
    a, b = _resolve(rp, a, b)
    sums = [_coarse_sum(rp, phi, a, b, 2 ** (rp.base.level - L)) for L in levels]
    return [abs(s1 - s0) for s0, s1 in zip(sums[:-1], sums[1:])]


class _Mode(str, enum.Enum):
    EXACT = "exact"
    DYADIC = "dyadic"


@dataclass(frozen=True)
class HolderNorm:
    gamma: float
    value: float
    mode: str


def _lags(n, mode):
    if mode == "exact":
        if n > EXACT_PAIRS_LIMIT:
            raise ValueError(f"exact all-pairs Hölder norm limited to n <= {EXACT_PAIRS_LIMIT} steps")
        return range(1, n + 1)
    return [2 ** m for m in range(int(np.log2(n)) + 1) if 2 ** m <= n]


def holder_norm(obj, gamma: float, mode: str = "dyadic", which: str = "path",
                a: int | None = None, b: int | None = None) -> HolderNorm:
    """Grid Hölder seminorm of a path (``which='path'``) or of its area (``which='area'``).

    ``mode='exact'`` inspects every pair of grid points; ``mode='dyadic'``
    only pairs whose distance is a power of two times the step.
    """
    mode = _Mode(mode).value
    if which == "path":
        if not 0 < gamma <= 1:
            raise ValueError("path exponent must be in (0, 1]")
        base = obj.base if isinstance(obj, Step2RoughPath) else obj
        x, dt = base.values, base.dt
        n_total = base.n
    elif which == "area":
        if not 0 < gamma <= 2:
            raise ValueError("area exponent must be in (0, 2]")
        if not isinstance(obj, Step2RoughPath):
            raise TypeError("area norm needs a lifted path")
        dt = obj.base.dt
        n_total = obj.n
    else:
        raise ValueError(f"unknown target {which!r}")
    a = 0 if a is None else a
    b = n_total if b is None else b
    n = b - a
    if n <= 0:
        return HolderNorm(gamma, 0.0, mode)
    best = 0.0
    for h in _lags(n, mode):
        left = np.arange(a, b - h + 1)
        if which == "path":
            diffs = np.linalg.norm(x[left + h] - x[left], axis=-1)
        else:
            diffs = np.linalg.norm(_area(obj, left, left + h), axis=(-2, -1))
        best = max(best, float(diffs.max()) / (h * dt) ** gamma)
    return HolderNorm(gamma, best, mode)


def grr_components(R: np.ndarray, times: np.ndarray, theta: float, p: float,
                   n_theta1: int = 9) -> tuple:
    """The two ingredients ``(U, V)`` of the Garsia-Rodemich-Rumsey type bound.

    ``R[a, b]`` holds a tensor for each grid pair ``a < b``.  ``U`` is the
    Besov-type double integral by grid quadrature, ``V`` the three-point
    defect seminorm minimised over ``n_theta1`` interior splits of ``theta``.
    """
    if theta <= 0 or p < 1:
        raise ValueError("need theta > 0 and p >= 1")
    R = np.asarray(R, dtype=float)
    m = R.shape[0]
    norms = np.sqrt((R.reshape(m, m, -1) ** 2).sum(-1)) if R.ndim > 2 else np.abs(R)
    h = times[1] - times[0]
    iu, ju = np.triu_indices(m, 1)
    lag = times[ju] - times[iu]
    s = theta + 2.0 / p
    U = (2.0 * h * h * np.sum((norms[iu, ju] / lag ** s) ** p)) ** (1.0 / p)
    theta1 = theta * np.arange(1, n_theta1 + 1) / (n_theta1 + 1)
    sup = np.zeros(n_theta1)
    flat = R.reshape(m, m, -1)
    for u in range(1, m - 1):
        d = flat[:u, u + 1:] - flat[:u, u][:, None] - flat[u, u + 1:][None, :]
        dn = np.sqrt((d ** 2).sum(-1))
        if not dn.any():
            continue
        left = times[u] - times[:u]
        right = times[u + 1:] - times[u]
        for k, t1 in enumerate(theta1):
            q = dn / (right[None, :] ** t1 * left[:, None] ** (theta - t1))
            sup[k] = max(sup[k], float(q.max()))
    return float(U), float(sup.min())


def grr_bound(R: np.ndarray, times: np.ndarray, theta: float, p: float) -> float:
    """``U + V`` with unit constant; a relative diagnostic, monotone in both parts."""
    U, V = grr_components(R, times, theta, p)
    return U + V


def ito_strat_defect(rp_ito: Step2RoughPath, rp_strat: Step2RoughPath, phi,
                     a: int | None = None, b: int | None = None) -> float:
    """``|I_strat - I_ito - 1/2 int div(phi) du|`` with the time integral by the trapezoid rule."""
    if rp_ito.base is not rp_strat.base and not (
        rp_ito.base.interval == rp_strat.base.interval
        and rp_ito.base.level == rp_strat.base.level
        and np.array_equal(rp_ito.base.values, rp_strat.base.values)
    ):
        raise ValueError("lifts must share the same base path")
    a, b = _resolve(rp_ito, a, b)
    k = np.arange(a, b + 1)
    t = rp_ito.times[k]
    div = phi.div(t, rp_ito.base.values[k])
    corr = 0.5 * rp_ito.base.dt * (0.5 * div[0] + div[1:-1].sum() + 0.5 * div[-1]) if b > a else 0.0
    return abs(rough_integral(rp_strat, phi, a, b) - rough_integral(rp_ito, phi, a, b) - corr)


def chen_defect_max(rp: Step2RoughPath, relative: bool = True) -> float:
    """Largest Chen defect over every grid triple ``a < u < b``.

    The defect is ``A[a,b] - A[a,u] - A[u,b] - X_au (x) X_ub``; with
    ``relative`` it is divided by ``|X_au| |X_ub| + 1``.
    """
    A = area_matrix(rp)
    x = rp.base.values
    return float(_chen_scan(A, x, relative))


def _chen_scan_py(A, x, relative):
    m = A.shape[0]
    worst = 0.0
    for u in range(1, m - 1):
        xau = x[u] - x[:u]
        xub = x[u + 1:] - x[u]
        d = A[:u, u + 1:] - A[:u, u][:, None] - A[u, u + 1:][None, :] - xau[:, None, :, None] * xub[None, :, None, :]
        dn = np.abs(d).max(axis=(-2, -1))
        if relative:
            dn = dn / (np.linalg.norm(xau, axis=-1)[:, None] * np.linalg.norm(xub, axis=-1)[None, :] + 1.0)
        worst = max(worst, float(dn.max()))
    return worst


try:
    import numba

    @numba.njit(cache=True)
    def _pair_norms(x):
        m, d = x.shape
        N = np.zeros((m, m))
        for a in range(m):
            for b in range(m):
                s = 0.0
                for i in range(d):
                    s += (x[b, i] - x[a, i]) ** 2
                N[a, b] = np.sqrt(s)
        return N

    @numba.njit(cache=True, fastmath=True, error_model="numpy")
    def _chen_scan_d2(Ac, xc, N, block=64):
        # d = 2 scan on component-major areas Ac[i, j, a, b], tiled over
        # (a, u, b) so the rows in use stay in cache; the innermost loop
        # writes into a buffer so it vectorises.
        m = xc.shape[1]
        worst = 0.0
        x0 = xc[0]
        x1 = xc[1]
        buf = np.zeros(block)
        for a0 in range(0, m, block):
            for u0 in range(a0, m, block):
                for b0 in range(u0, m, block):
                    for a in range(a0, min(a0 + block, m)):
                        for u in range(max(u0, a + 1), min(u0 + block, m)):
                            lo = max(b0, u + 1)
                            hi = min(b0 + block, m)
                            if hi <= lo:
                                continue
                            p0 = x0[u] - x0[a]
                            p1 = x1[u] - x1[a]
                            c00 = Ac[0, 0, a, u]
                            c01 = Ac[0, 1, a, u]
                            c10 = Ac[1, 0, a, u]
                            c11 = Ac[1, 1, a, u]
                            nau = N[a, u]
                            x0u = x0[u]
                            x1u = x1[u]
                            ra00 = Ac[0, 0, a, lo:hi]
                            ra01 = Ac[0, 1, a, lo:hi]
                            ra10 = Ac[1, 0, a, lo:hi]
                            ra11 = Ac[1, 1, a, lo:hi]
                            ru00 = Ac[0, 0, u, lo:hi]
                            ru01 = Ac[0, 1, u, lo:hi]
                            ru10 = Ac[1, 0, u, lo:hi]
                            ru11 = Ac[1, 1, u, lo:hi]
                            y0 = x0[lo:hi]
                            y1 = x1[lo:hi]
                            nu = N[u, lo:hi]
                            n = hi - lo
                            for k in range(n):
                                q0 = y0[k] - x0u
                                q1 = y1[k] - x1u
                                e0 = abs(ra00[k] - c00 - ru00[k] - p0 * q0)
                                e1 = abs(ra01[k] - c01 - ru01[k] - p0 * q1)
                                e2 = abs(ra10[k] - c10 - ru10[k] - p1 * q0)
                                e3 = abs(ra11[k] - c11 - ru11[k] - p1 * q1)
                                m1 = e0 if e0 > e1 else e1
                                m2 = e2 if e2 > e3 else e3
                                buf[k] = (m1 if m1 > m2 else m2) / (nau * nu[k] + 1.0)
                            w = buf[:n].max()
                            if w > worst:
                                worst = w
        return worst

    @numba.njit(cache=True, fastmath=True)
    def _chen_scan_gen(Ac, xc, N):
        d = xc.shape[0]
        m = xc.shape[1]
        worst = 0.0
        buf = np.empty(m)
        for a in range(m - 2):
            for u in range(a + 1, m - 1):
                for b in range(u + 1, m):
                    buf[b] = 0.0
                for i in range(d):
                    xau = xc[i, u] - xc[i, a]
                    for j in range(d):
                        c0 = Ac[i, j, a, u]
                        rowa = Ac[i, j, a]
                        rowu = Ac[i, j, u]
                        xj = xc[j]
                        xuj = xj[u]
                        for b in range(u + 1, m):
                            buf[b] = max(buf[b], abs(rowa[b] - c0 - rowu[b] - xau * (xj[b] - xuj)))
                nau = N[a, u]
                Nu = N[u]
                for b in range(u + 1, m):
                    worst = max(worst, buf[b] / (nau * Nu[b] + 1.0))
        return worst

    def _chen_scan(A, x, relative):
        x = np.ascontiguousarray(x, dtype=float)
        Ac = np.ascontiguousarray(np.moveaxis(A, (2, 3), (0, 1)))
        xc = np.ascontiguousarray(x.T)
        N = _pair_norms(x) if relative else np.zeros((x.shape[0], x.shape[0]))
        if x.shape[1] == 2:
            return _chen_scan_d2(Ac, xc, N)
        return _chen_scan_gen(Ac, xc, N)

except ImportError:  # pragma: no cover
    _chen_scan = _chen_scan_py
