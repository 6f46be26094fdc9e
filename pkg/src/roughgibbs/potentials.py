"""External and pair potentials and the energy functionals built from them.

The harmonic reference ``V(x) = |x|^2/2 - d/2`` has ground state
``Psi(x) = pi**(-d/4) exp(-|x|^2/2)`` with eigenvalue 0, spectral gap 1 and
ground-state measure ``omega = N(0, I/2)``.  Its ground-state transformed
semigroup is the OU process of :mod:`roughgibbs.brownian`, whose transition
density relative to ``omega`` is the Mehler kernel.

The pair potential ``GaussExp`` is

    W(x, t) = A exp(-|x|^2 / (2 sigma^2)) exp(-|t| / ell)

with strictly positive Fourier transform, so the grid energy

    W_T(X) = 1/2 sum_{a,b} dX_a . dX_b W(X_a - X_b, t_a - t_b)

is a positive semidefinite quadratic form in the increments.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .rough import GridPath, Scheme, Step2RoughPath

__all__ = [
    "HarmonicRef",
    "ConfiningPower",
    "GaussExp",
    "EnergyConfig",
    "potential_to_json",
    "potential_from_json",
    "mehler_pi",
    "mehler_series",
    "omega_quadrature",
    "gap_decay_fit",
    "v_energy",
    "w_energy",
    "w_energy_arrays",
    "energy_blocks",
    "pair_energies",
    "allocate_pairs",
    "w_pair_energy",
    "w_boundary_energy",
    "cross_energy_arrays",
    "w_energy_batch",
    "cross_energy_batch",
]


# ---------------------------------------------------------------------------
# external potentials


@dataclass(frozen=True)
class HarmonicRef:
    """Harmonic reference potential ``|x|^2/2 - d/2`` with exact spectral data."""

    dim: int = 1

    family = "harmonic"
    ground_energy = 0.0
    gap = 1.0

    def V(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum(x * x, axis=-1) - 0.5 * self.dim

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        return math.pi ** (-self.dim / 4) * np.exp(-0.5 * np.sum(x * x, axis=-1))

    def omega_sample(self, g, size):
        """Draw from ``omega = N(0, I/2)``; returns shape ``size + (dim,)``."""
        size = (size,) if np.isscalar(size) else tuple(size)
        return g.normal(0.0, math.sqrt(0.5), size=size + (self.dim,))

    def pi(self, t, x, y):
        return mehler_pi(self, t, x, y)


@dataclass(frozen=True)
class ConfiningPower:
    """``V(x) = C1 |x|^s + C3``; no spectral data is available."""

    s: float = 2.0
    C1: float = 1.0
    C3: float = 0.0
    dim: int = 1

    family = "confining_power"

    def __post_init__(self):
        if self.s <= 0 or self.C1 <= 0:
            raise ValueError("need s > 0 and C1 > 0 for a confining potential")

    def V(self, x):
        x = np.asarray(x, dtype=float)
        return self.C1 * np.linalg.norm(x, axis=-1) ** self.s + self.C3

    def growth_bounds(self, x):
        """Two-sided bound ``C1 |x|^s + C3 <= V(x) <= C1 |x|^s + C3`` (tight)."""
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1) ** self.s
        return self.C1 * r + self.C3, self.C1 * r + self.C3


# ---------------------------------------------------------------------------
# pair potential


@dataclass(frozen=True)
class GaussExp:
    """Gaussian-in-space, exponential-in-time pair potential."""

    A: float = 1.0
    sigma: float = 1.0
    ell: float = 1.0
    dim: int = 1

    family = "gauss_exp"

    def __post_init__(self):
        if self.A <= 0 or self.sigma <= 0 or self.ell <= 0:
            raise ValueError("A, sigma and ell must be positive")

    def value(self, x, t):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return self.A * np.exp(-0.5 * r2 / self.sigma ** 2 - np.abs(t) / self.ell)

    def grad(self, x, t):
        x = np.asarray(x, dtype=float)
        return -x / self.sigma ** 2 * self.value(x, t)[..., None]

    def hess(self, x, t):
        x = np.asarray(x, dtype=float)
        s2 = self.sigma ** 2
        outer = x[..., :, None] * x[..., None, :] / s2 ** 2
        return (outer - np.eye(x.shape[-1]) / s2) * self.value(x, t)[..., None, None]

    def third(self, x, t):
        """Third spatial derivatives ``d^3 W / dx_i dx_j dx_k``."""
        x = np.asarray(x, dtype=float)
        s2 = self.sigma ** 2
        eye = np.eye(x.shape[-1])
        xi = x[..., :, None, None]
        xj = x[..., None, :, None]
        xk = x[..., None, None, :]
        term = -xi * xj * xk / s2 ** 3 + (
            eye[:, :, None] * xk + eye[:, None, :] * xj + eye[None, :, :] * xi
        ) / s2 ** 2
        return term * self.value(x, t)[..., None, None, None]

    def fourier(self, k, w):
        """``W^(k, w) = int W(x, t) exp(-i k.x - i w t) dx dt``."""
        k = np.asarray(k, dtype=float)
        k2 = np.sum(k * k, axis=-1) if k.ndim and k.shape[-1] == self.dim else k * k
        d = self.dim
        spatial = self.A * (2 * math.pi) ** (d / 2) * self.sigma ** d * np.exp(-0.5 * self.sigma ** 2 * k2)
        return spatial * 2 * self.ell / (1.0 + (self.ell * np.asarray(w, dtype=float)) ** 2)

    def time_decay_bound(self, tau):
        """``sup_x |W(x, t)|`` for ``|t| >= tau``."""
        return self.A * math.exp(-abs(tau) / self.ell)


_FAMILIES = {"harmonic": HarmonicRef, "confining_power": ConfiningPower, "gauss_exp": GaussExp}


def potential_to_json(p) -> str:
    return json.dumps({"family": p.family, "params": asdict(p)}, sort_keys=True)


def potential_from_json(text):
    d = json.loads(text) if isinstance(text, str) else dict(text)
    try:
        cls = _FAMILIES[d["family"]]
    except KeyError:
        raise ValueError(f"unknown potential family {d.get('family')!r}") from None
    return cls(**d.get("params", {}))


@dataclass(frozen=True)
class EnergyConfig:
    """Coupling constant with a configurable smallness gate."""

    lam: float = 0.0
    lambda_star: float = 1.0
    beta_eff: float = 4.0

    def __post_init__(self):
        if abs(self.lam) > self.lambda_star:
            raise ValueError(f"|lambda| = {abs(self.lam)} exceeds the gate {self.lambda_star}")


# ---------------------------------------------------------------------------
# Mehler kernel


def mehler_pi(ext: HarmonicRef, t, x, y):
    """Transition density of the OU process relative to ``omega``.

    ``x`` and ``y`` have shape ``(..., d)`` (or ``(...)`` when ``d = 1``).
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("time must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if ext.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
        y = y[..., None]
    q = np.exp(-t)
    q2 = q * q
    one = -np.expm1(-2 * t)
    xx = np.sum(x * x, axis=-1)
    yy = np.sum(y * y, axis=-1)
    xy = np.sum(x * y, axis=-1)
    return one ** (-ext.dim / 2) * np.exp(-(q2 * (xx + yy) - 2 * q * xy) / one)


def mehler_series(t, x, y, kmax: int = 40):
    """Eigenfunction expansion of the one-dimensional Mehler kernel.

    Sums ``exp(-k t) h_k(x) h_k(y)`` for ``k <= kmax`` with ``h_k`` the
    Hermite polynomials normalised in ``L^2(omega)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    hx_prev, hy_prev = np.zeros_like(x), np.zeros_like(y)
    hx, hy = np.ones_like(x), np.ones_like(y)
    total = np.ones(np.broadcast(x, y).shape)
    for k in range(kmax):
        c1 = math.sqrt(2.0 / (k + 1))
        c0 = math.sqrt(k / (k + 1))
        hx, hx_prev = c1 * x * hx - c0 * hx_prev, hx
        hy, hy_prev = c1 * y * hy - c0 * hy_prev, hy
        total = total + math.exp(-(k + 1) * t) * hx * hy
    return total


def omega_quadrature(n: int = 60, dim: int = 1):
    """Gauss-Hermite nodes and weights integrating against ``omega``."""
    z, w = np.polynomial.hermite.hermgauss(n)
    w = w / math.sqrt(math.pi)
    if dim == 1:
        return z[:, None], w
    grids = np.meshgrid(*([z] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack(np.meshgrid(*([w] * dim), indexing="ij")), axis=0).ravel()
    return nodes, weights


def gap_decay_fit(ext: HarmonicRef, bs=(2.0, 4.0, 6.0), box: float = 1.0, n_grid: int = 61):
    """Fit the exponential decay rate of ``sup |pi_b - 1|`` over a box.

    Returns ``(rate, sups)`` where ``rate`` is minus the least-squares
    slope of ``log sup`` against ``b``.
    """
    u = np.linspace(-box, box, n_grid)
    grids = np.meshgrid(*([u] * ext.dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    X = pts[:, None, :]
    Y = pts[None, :, :]
    sups = np.array([np.max(np.abs(mehler_pi(ext, b, X, Y) - 1.0)) for b in bs])
    slope = np.polyfit(np.asarray(bs, dtype=float), np.log(sups), 1)[0]
    return -slope, sups


# ---------------------------------------------------------------------------
# energies


def _interval_indices(path: GridPath, interval):
    if interval is None:
        return 0, path.n
    s, t = interval
    a, b = path.index_of(s), path.index_of(t)
    if b < a:
        raise ValueError("interval endpoints out of order")
    return a, b


def v_energy(path, ext, interval=None) -> float:
    """Trapezoid quadrature of ``int V(X_u) du`` on the path grid."""
    base = path.base if isinstance(path, Step2RoughPath) else path
    a, b = _interval_indices(base, interval)
    if a == b:
        return 0.0
    v = ext.V(base.values[a:b + 1])
    return float(base.dt * (v.sum() - 0.5 * (v[0] + v[-1])))


def w_energy_arrays(x, times, W) -> float:
    """Grid energy from values ``x`` of shape ``(n+1, d)`` and matching ``times``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    dx = np.diff(x, axis=0)
    left, tl = x[:-1], np.asarray(times, dtype=float)[:-1]
    K = W.value(left[:, None, :] - left[None, :, :], tl[:, None] - tl[None, :])
    return 0.5 * float(np.einsum("ad,bd,ab->", dx, dx, K))


def _require_ito(rp):
    if isinstance(rp, Step2RoughPath) and rp.scheme is not Scheme.ITO:
        raise ValueError("the pair energy is defined through the Ito current; lift with Scheme.ITO")


def w_energy(rp, W, interval=None) -> float:
    """``1/2 sum_{a,b} dX_a . dX_b W(X_a - X_b, t_a - t_b)`` over the grid, diagonal included."""
    _require_ito(rp)
    base = rp.base if isinstance(rp, Step2RoughPath) else rp
    a, b = _interval_indices(base, interval)
    return w_energy_arrays(base.values[a:b + 1], base.times[a:b + 1], W)


def _segments_to_arrays(segments):
    """Concatenate consecutive grid paths; returns ``(x, times, step_owner)``."""
    xs, ts, owner = [], [], []
    for i, seg in enumerate(segments):
        base = seg.base if isinstance(seg, Step2RoughPath) else seg
        _require_ito(seg)
        if xs:
            if abs(ts[-1][-1] - base.interval[0]) > 1e-12 or not np.array_equal(xs[-1][-1], base.values[0]):
                raise ValueError("segments must join continuously in time and space")
            xs.append(base.values[1:])
            ts.append(base.times[1:])
        else:
            xs.append(base.values)
            ts.append(base.times)
        owner.append(np.full(base.n, i))
    return np.concatenate(xs), np.concatenate(ts), np.concatenate(owner)


def energy_blocks(segments, W) -> np.ndarray:
    """Block sums ``J[i, j] = sum_{a in tau_i, b in tau_j} dX_a . dX_b W(X_a - X_b, t_a - t_b)``.

    ``segments`` are consecutive paths ``tau_0, ..., tau_{N-1}`` (or a
    single path together with an integer ``N`` via :func:`pair_energies`).
    """
    x, t, owner = _segments_to_arrays(segments)
    N = int(owner.max()) + 1
    dx = np.diff(x, axis=0)
    left, tl = x[:-1], t[:-1]
    K = W.value(left[:, None, :] - left[None, :, :], tl[:, None] - tl[None, :])
    G = (dx @ dx.T) * K
    onehot = np.zeros((len(owner), N))
    onehot[np.arange(len(owner)), owner] = 1.0
    return onehot.T @ G @ onehot


def _split(rp, N):
    base = rp.base if isinstance(rp, Step2RoughPath) else rp
    if N < 2 or base.n % N:
        raise ValueError(f"{N} intervals do not align with {base.n} grid steps")
    m = base.n // N
    level = int(round(math.log2(m)))
    return [GridPath((base.times[i * m], base.times[(i + 1) * m]), level, base.values[i * m:(i + 1) * m + 1])
            for i in range(N)]


def _as_segments(obj, N=None):
    if isinstance(obj, (list, tuple)):
        return list(obj)
    if N is None:
        raise ValueError("a single path needs the number of intervals N")
    _require_ito(obj)
    return _split(obj, N)


def allocate_pairs(J) -> np.ndarray:
    """Turn block sums ``J[..., i, j]`` into pair energies ``P[..., i, j]`` (``i < j``).

    Off-diagonal blocks enter as ``(J_ij + J_ji) / 2``.  The diagonal block
    ``J_kk / 2`` of an interior interval is shared equally by its two
    neighbouring pairs; each end interval gives all of its ``J_kk / 2`` to
    its single neighbouring pair.  The pair energies therefore sum to
    ``W_T = sum J / 2`` exactly, and ``P[i, j]`` depends only on the path
    over ``tau_i`` and ``tau_j``.
    """
    J = np.asarray(J, dtype=float)
    n = J.shape[-1]
    if n < 2:
        raise ValueError("need at least two intervals")
    P = np.triu(0.5 * (J + np.swapaxes(J, -1, -2)), k=1)
    diag = 0.5 * np.diagonal(J, axis1=-2, axis2=-1)
    for k in range(n):
        if 0 < k < n - 1:
            P[..., k - 1, k] += 0.5 * diag[..., k]
            P[..., k, k + 1] += 0.5 * diag[..., k]
        elif k == 0:
            P[..., 0, 1] += diag[..., 0]
        else:
            P[..., n - 2, n - 1] += diag[..., n - 1]
    return P


def pair_energies(segments, W, N=None) -> dict:
    """Pair energies ``W_{tau_i, tau_j}`` for all ``i < j`` (see :func:`allocate_pairs`)."""
    segs = _as_segments(segments, N)
    P = allocate_pairs(energy_blocks(segs, W))
    n = P.shape[0]
    return {(i, j): float(P[i, j]) for i in range(n) for j in range(i + 1, n)}


def w_pair_energy(rp_or_segments, W, i: int, j: int, N: int | None = None) -> float:
    """Energy ``W_{tau_i, tau_j}`` carried by one pair of partition intervals."""
    if not 0 <= i < j:
        raise ValueError("need 0 <= i < j")
    pe = pair_energies(rp_or_segments, W, N)
    if (i, j) not in pe:
        raise ValueError(f"pair {(i, j)} outside the partition")
    return float(pe[(i, j)])


def cross_energy_arrays(x, tx, y, ty, W) -> float:
    """``sum_{a, b} dX_a . dY_b W(X_a - Y_b, t_a - s_b)`` for two disjoint grid paths."""
    x = np.asarray(x, dtype=float).reshape(len(tx), -1)
    y = np.asarray(y, dtype=float).reshape(len(ty), -1)
    dx, dy = np.diff(x, axis=0), np.diff(y, axis=0)
    K = W.value(x[:-1, None, :] - y[None, :-1, :], np.asarray(tx)[:-1, None] - np.asarray(ty)[None, :-1])
    return float(np.einsum("ad,bd,ab->", dx, dy, K))


def w_boundary_energy(rp, bc, W, interval=None) -> float:
    """Interaction ``int_I w^{C_Y}(t, X_t) . dX_t`` of the inner path with boundary currents.

    ``bc`` is a :class:`~roughgibbs.currents.BoundaryCurrent` or a sequence
    of them.  The windows of a ``'minus'`` current must lie before the
    interval, those of a ``'plus'`` current after it.
    """
    from .currents import boundary_interaction

    _require_ito(rp)
    return boundary_interaction(rp, bc, W, interval)


def w_energy_batch(X, times, W, chunk: int = 32) -> np.ndarray:
    """Grid energies of a batch of paths ``X`` with shape ``(P, n+1, d)`` on common ``times``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    tl = np.asarray(times, dtype=float)[:-1]
    lag = tl[:, None] - tl[None, :]
    out = np.empty(len(X))
    for lo in range(0, len(X), chunk):
        x = X[lo:lo + chunk]
        dx = np.diff(x, axis=1)
        left = x[:, :-1]
        K = W.value(left[:, :, None, :] - left[:, None, :, :], lag[None])
        G = np.einsum("pad,pbd->pab", dx, dx)
        out[lo:lo + chunk] = 0.5 * np.einsum("pab,pab->p", G, K)
    return out


def cross_energy_batch(X, tx, Y, ty, W, chunk: int = 64) -> np.ndarray:
    """``sum_{a,b} dX_a . dY_b W(X_a - Y_b, t_a - s_b)`` for each path in a batch ``X``.

    ``Y`` is a single outside path with shape ``(q+1, d)`` on times ``ty``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    Y = np.asarray(Y, dtype=float).reshape(len(ty), -1)
    dy = np.diff(Y, axis=0)
    lag = np.asarray(tx, dtype=float)[:-1, None] - np.asarray(ty, dtype=float)[None, :-1]
    out = np.empty(len(X))
    for lo in range(0, len(X), chunk):
        x = X[lo:lo + chunk]
        dx = np.diff(x, axis=1)
        K = W.value(x[:, :-1, None, :] - Y[None, None, :-1, :], lag[None])
        out[lo:lo + chunk] = np.einsum("pad,bd,pab->p", dx, dy, K)
    return out
