"""Finite-volume Gibbs path measures by importance reweighting.

The Gibbs measure on the window ``[-T, T]`` is

    mu_T(dX) = exp(-lambda W_T(X)) nu_T(dX) / Z_T,

where ``nu_T`` is the stationary OU process (the external potential is
absorbed exactly into this reference).  Samples are drawn from the
reference and carry log-weights ``-lambda W_T``.  Because ``W_T >= 0`` on
the grid, every weight is at most one for ``lambda > 0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .brownian import PathLawSpec, _ou_paths, cal_n, generator, ou_bridge_batch, sample_batch
from .currents import BoundaryCurrent
from .potentials import GaussExp, HarmonicRef, cross_energy_batch, mehler_pi, w_energy_batch
from .rng import as_stream, chunked, parallel_map

__all__ = [
    "GibbsSpec",
    "WeightedEnsemble",
    "BoundaryCondition",
    "reference_paths",
    "sample_mu_T",
    "specification_kernel",
    "DLRReport",
    "dlr_consistency_check",
    "growth_diagnostic",
    "tail_fit",
    "mixing_diagnostic",
]

REFERENCES = ("nu_stationary", "nu_bridge", "chi")


@dataclass(frozen=True)
class GibbsSpec:
    """Window, potentials, coupling and reference law of a Gibbs ensemble.

    Parameters
    ----------
    T : float
        Half-width of the window ``[-T, T]``.
    level : int
        The window is cut into ``2**level`` grid steps.
    lam : float
        Coupling constant.
    reference : {'nu_stationary', 'nu_bridge', 'chi'}
        Stationary OU, OU bridge between ``bridge_ends``, or the product law
        of ``N`` independent OU bridges with ``omega``-distributed endpoints.
    """

    T: float = 1.0
    level: int = 6
    lam: float = 0.0
    W: GaussExp = field(default_factory=GaussExp)
    ext: HarmonicRef = field(default_factory=HarmonicRef)
    reference: str = "nu_stationary"
    bridge_ends: tuple | None = None
    N: int | None = None

    def __post_init__(self):
        if not isinstance(self.ext, HarmonicRef):
            raise ValueError("Gibbs ensembles need the harmonic reference potential")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")
        if self.W.dim != self.ext.dim:
            raise ValueError("pair and external potential dimensions differ")
        if self.reference == "nu_bridge" and self.bridge_ends is None:
            raise ValueError("a bridge reference needs bridge_ends")
        if self.reference == "chi" or self.N is not None:
            N = self.N
            if N is None or N < 2 or N % 2:
                raise ValueError("the partition needs an even N >= 2")
            if (2 ** self.level) % N:
                raise ValueError("partition intervals must align with the grid")

    @property
    def dim(self) -> int:
        return self.ext.dim

    @property
    def interval(self) -> tuple:
        return (-float(self.T), float(self.T))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(-self.T, self.T, 2 ** self.level + 1)

    @property
    def b(self) -> float | None:
        return None if self.N is None else 2 * self.T / self.N


@dataclass(eq=False)
class WeightedEnsemble:
    """Paths with log-weights.

    Attributes
    ----------
    values : ndarray, shape (n, m+1, d)
    times : ndarray, shape (m+1,)
    log_w : ndarray, shape (n,)
    extras : dict of per-path arrays (energy components and the like)
    """

    values: np.ndarray
    times: np.ndarray
    log_w: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.log_w = np.asarray(self.log_w, dtype=float)
        if not np.all(np.isfinite(self.log_w)):
            raise ValueError("log-weights must be finite")
        self.diverged = self.ess < 0.01 * self.n
        if self.diverged:
            warnings.warn(f"effective sample size {self.ess:.1f} is below 1% of {self.n}; coupling too large",
                          RuntimeWarning, stacklevel=2)

    @property
    def n(self) -> int:
        return len(self.log_w)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    @property
    def z_hat(self) -> float:
        """Mean weight, summed with compensated summation."""
        return math.fsum(self.weights) / self.n

    @property
    def z_se(self) -> float:
        w = self.weights
        return float(np.std(w, ddof=1) / math.sqrt(self.n)) if self.n > 1 else 0.0

    @property
    def ess(self) -> float:
        w = np.exp(self.log_w - self.log_w.max())
        return float(w.sum() ** 2 / np.sum(w * w))

    def normalized_weights(self) -> np.ndarray:
        w = np.exp(self.log_w - self.log_w.max())
        return w / math.fsum(w)

    def expect(self, F) -> tuple:
        """Self-normalised estimate of ``E_mu[F]`` and its delta-method standard error.

        ``F`` is a callable on ``(values, times)`` or an array of per-path values.
        """
        f = np.asarray(F(self.values, self.times) if callable(F) else F, dtype=float)
        p = self.normalized_weights()
        mean = math.fsum(p * f)
        se = math.sqrt(float(np.sum(p * p * (f - mean) ** 2)))
        return mean, se

    def merge(self, *others) -> "WeightedEnsemble":
        parts = (self,) + others
        if any(not np.array_equal(p.times, self.times) for p in parts):
            raise ValueError("ensembles live on different grids")
        keys = set(self.extras)
        extras = {k: np.concatenate([p.extras[k] for p in parts]) for k in keys if all(k in p.extras for p in parts)}
        return WeightedEnsemble(np.concatenate([p.values for p in parts]), self.times,
                                np.concatenate([p.log_w for p in parts]), extras)

    def summary(self) -> dict:
        return {"n": self.n, "z_hat": self.z_hat, "z_se": self.z_se, "ess": self.ess,
                "diverged": bool(self.diverged)}


# ---------------------------------------------------------------------------
# reference laws


def reference_paths(spec: GibbsSpec, n: int, g) -> tuple:
    """Sample ``n`` reference paths; returns ``(values, log_correction)``.

    For the ``chi`` reference the correction is ``sum_k log pi_b(x_{k+1}, x_k)``,
    which turns ``chi``-expectations into ``nu``-expectations.
    """
    g = generator(g)
    d = spec.dim
    if spec.reference == "nu_stationary":
        vals = sample_batch(PathLawSpec("ou", spec.interval, spec.level, d), n, g)
        return vals, np.zeros(n)
    if spec.reference == "nu_bridge":
        x, y = (np.broadcast_to(np.asarray(e, dtype=float), (n, d)) for e in spec.bridge_ends)
        return ou_bridge_batch(n, spec.interval, spec.level, x, y, g), np.zeros(n)
    N = spec.N
    m = 2 ** spec.level // N  # a power of two, since N divides 2**level
    sub = int(round(math.log2(m)))
    ends = spec.ext.omega_sample(g, (n, N + 1))
    vals = np.empty((n, 2 ** spec.level + 1, d))
    t = spec.times
    for k in range(N):
        seg = ou_bridge_batch(n, (t[k * m], t[(k + 1) * m]), sub, ends[:, k], ends[:, k + 1], g)
        vals[:, k * m:(k + 1) * m + 1] = seg
    corr = np.sum(np.log(mehler_pi(spec.ext, spec.b, ends[:, 1:], ends[:, :-1])), axis=1)
    return vals, corr


def _mu_chunk(task):
    spec, stream, count = task
    g = stream.generator()
    vals, corr = reference_paths(spec, count, g)
    if spec.lam == 0.0:
        energy = np.zeros(count)
    else:
        energy = w_energy_batch(vals, spec.times, spec.W)
    return vals, corr - spec.lam * energy, energy


def sample_mu_T(spec: GibbsSpec, n_paths: int, rng, workers: int = 1, chunk: int = 2048) -> WeightedEnsemble:
    """Importance-sampled ensemble for ``mu_T``.

    Chunks of ``chunk`` paths draw from their own child streams, so the
    result does not depend on ``workers``.
    """
    if n_paths < 100:
        raise ValueError("use at least 100 paths")
    stream = as_stream(rng)
    tasks = [(spec, stream.child(cid), cnt) for cid, cnt in chunked(n_paths, chunk)]
    parts = parallel_map(_mu_chunk, tasks, workers)
    vals = np.concatenate([p[0] for p in parts])
    logw = np.concatenate([p[1] for p in parts])
    energy = np.concatenate([p[2] for p in parts])
    return WeightedEnsemble(vals, spec.times, logw, {"W_T": energy})


# ---------------------------------------------------------------------------
# boundary conditions and the specification kernel


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """Outside paths on both sides of an inner interval, with a norm cap.

    Membership in the allowed class is checked through the weighted window
    functional over the stored windows (plus the omitted tail weight, bounded
    by the largest stored window functional).
    """

    minus: BoundaryCurrent | None = None
    plus: BoundaryCurrent | None = None
    cap: float = math.inf
    alpha: float = 2.0
    p: float = 3.0

    def __post_init__(self):
        if self.minus is not None and self.minus.side != "minus":
            raise ValueError("minus boundary must have side 'minus'")
        if self.plus is not None and self.plus.side != "plus":
            raise ValueError("plus boundary must have side 'plus'")
        if self.norm() > self.cap:
            raise ValueError(f"boundary condition norm {self.norm():.4g} exceeds the cap {self.cap}")

    def currents(self) -> list:
        return [c for c in (self.minus, self.plus) if c is not None]

    def norm(self) -> float:
        wins = [w for c in self.currents() for w in c.windows]
        if not wins:
            return 0.0
        return cal_n(wins, self.alpha, self.p).value

    def paths(self) -> list:
        """Outside paths as ``(values, times)`` pairs, one per window."""
        return [(rp.base.values, rp.times) for c in self.currents() for _, rp in c.windows]

    def endpoints(self):
        """Values of the outside path at the two ends of the inner interval."""
        x = self.minus.windows[-1][1].base.values[-1] if self.minus is not None else None
        y = self.plus.windows[0][1].base.values[0] if self.plus is not None else None
        return x, y


def _kernel_chunk(task):
    spec, stream, count, outside, x, y = task
    g = stream.generator()
    vals = ou_bridge_batch(count, spec.interval, spec.level,
                            np.broadcast_to(x, (count, spec.dim)), np.broadcast_to(y, (count, spec.dim)), g)
    if spec.lam == 0.0:
        inner = np.zeros(count)
        bnd = np.zeros(count)
    else:
        inner = w_energy_batch(vals, spec.times, spec.W)
        bnd = np.zeros(count)
        for yv, ty in outside:
            bnd += cross_energy_batch(vals, spec.times, yv, ty, spec.W)
    return vals, -spec.lam * (inner + bnd), inner, bnd


def specification_kernel(spec: GibbsSpec, bc: BoundaryCondition, n_paths: int, rng,
                         workers: int = 1, chunk: int = 2048) -> WeightedEnsemble:
    """Ensemble for ``rho_I(. | Y)`` on ``I = [-T, T]``.

    The reference is the OU bridge joining the boundary paths; the weight is
    ``exp(-lambda W_I(X) - lambda sum_{a in I, b outside} dX_a . dY_b W(X_a - Y_b, t_a - t_b))``.
    The second sum is the left-point discretisation of the integral of the
    induced field ``w^{C_Y}`` against ``X`` (the compensated version is
    :func:`~roughgibbs.potentials.w_boundary_energy`).  Missing sides fall
    back to ``spec.bridge_ends``.
    """
    x, y = bc.endpoints()
    ends = spec.bridge_ends or (np.zeros(spec.dim), np.zeros(spec.dim))
    x = np.asarray(ends[0] if x is None else x, dtype=float)
    y = np.asarray(ends[1] if y is None else y, dtype=float)
    outside = bc.paths()
    stream = as_stream(rng)
    tasks = [(spec, stream.child(cid), cnt, outside, x, y) for cid, cnt in chunked(n_paths, chunk)]
    parts = parallel_map(_kernel_chunk, tasks, workers)
    return WeightedEnsemble(
        np.concatenate([p[0] for p in parts]), spec.times,
        np.concatenate([p[1] for p in parts]),
        {"W_I": np.concatenate([p[2] for p in parts]), "W_boundary": np.concatenate([p[3] for p in parts])},
    )


# ---------------------------------------------------------------------------
# DLR consistency


@dataclass(frozen=True)
class DLRReport:
    direct: float
    direct_se: float
    composed: float
    composed_se: float
    passed: bool

    @property
    def difference(self) -> float:
        return self.composed - self.direct

    @property
    def pooled_se(self) -> float:
        return math.hypot(self.direct_se, self.composed_se)


def _sn_mean(logw, f, axis=-1):
    w = np.exp(logw - logw.max(axis=axis, keepdims=True))
    return np.sum(w * f, axis=axis) / np.sum(w, axis=axis)


def dlr_consistency_check(spec: GibbsSpec, F, n_paths: int, rng, inner_half: float | None = None,
                          outside=None, n_inner: int = 16, gate: float = 3.0) -> DLRReport:
    """Compare ``rho_J(F | Z)`` with ``int rho_I(F | Y) rho_J(dY | Z)``.

    ``J = [-T, T]`` is the window of ``spec``; ``I = [-inner_half, inner_half]``
    (default ``T/2``) must sit on the grid.  ``outside`` is a list of fixed
    outside paths ``(values, times)``; by default a stationary OU path on
    ``[-2T, 2T]`` drawn from the stream, restricted to the complement of ``J``.
    ``F`` maps ``(values on I, times on I)`` to per-path values.
    """
    stream = as_stream(rng)
    g0 = stream.child(0).generator()
    d = spec.dim
    T = spec.T
    tJ = spec.times
    m = len(tJ) - 1
    dt = 2 * T / m
    h = T / 2 if inner_half is None else float(inner_half)
    ia, ib = int(round((T - h) / dt)), int(round((T + h) / dt))
    if abs(tJ[ia] + h) > 1e-9 or abs(tJ[ib] - h) > 1e-9 or ib <= ia:
        raise ValueError("the inner interval must lie on the grid")
    lev_I = int(round(math.log2(ib - ia)))
    if 2 ** lev_I != ib - ia:
        raise ValueError("the inner interval must span a power-of-two number of steps")
    tI = tJ[ia:ib + 1]

    if outside is None:
        big = sample_batch(PathLawSpec("ou", (-2 * T, 2 * T), spec.level + 1, d), 1, g0)[0]
        tb = np.linspace(-2 * T, 2 * T, 2 * m + 1)
        k0 = m // 2
        outside = [(big[:k0 + 1], tb[:k0 + 1]), (big[k0 + m:], tb[k0 + m:])]
    zx, zy = outside[0][0][-1], outside[-1][0][0]

    def outer(g, n):
        vals = ou_bridge_batch(n, spec.interval, spec.level, np.broadcast_to(zx, (n, d)),
                                np.broadcast_to(zy, (n, d)), g)
        logw = np.zeros(n)
        if spec.lam != 0.0:
            e = w_energy_batch(vals, tJ, spec.W)
            for yv, ty in outside:
                e = e + cross_energy_batch(vals, tJ, yv, ty, spec.W)
            logw = -spec.lam * e
        return vals, logw

    # direct side
    vals, logw = outer(stream.child(1).generator(), n_paths)
    f = np.asarray(F(vals[:, ia:ib + 1], tI), dtype=float)
    p = np.exp(logw - logw.max())
    p /= p.sum()
    direct = float(np.sum(p * f))
    direct_se = math.sqrt(float(np.sum(p * p * (f - direct) ** 2)))

    # composed side: outer draw, then inner re-draw on I given the outer path outside I
    g2 = stream.child(2).generator()
    vals, logw = outer(g2, n_paths)
    inner_means = np.empty(n_paths)
    batch = max(1, 4096 // n_inner)
    for lo in range(0, n_paths, batch):
        Y = vals[lo:lo + batch]
        nb = len(Y)
        x0 = np.repeat(Y[:, ia], n_inner, axis=0)
        y0 = np.repeat(Y[:, ib], n_inner, axis=0)
        Xi = ou_bridge_batch(nb * n_inner, (tI[0], tI[-1]), lev_I, x0, y0, g2)
        if spec.lam != 0.0:
            e = w_energy_batch(Xi, tI, spec.W)
            for yv, ty in outside:
                e = e + cross_energy_batch(Xi, tI, yv, ty, spec.W)
            # outer path on J \ I, one outside path per outer sample
            left = np.empty(len(Xi))
            right = np.empty(len(Xi))
            for r in range(nb):
                sl = slice(r * n_inner, (r + 1) * n_inner)
                left[sl] = cross_energy_batch(Xi[sl], tI, Y[r, :ia + 1], tJ[:ia + 1], spec.W)
                right[sl] = cross_energy_batch(Xi[sl], tI, Y[r, ib:], tJ[ib:], spec.W)
            li = (-spec.lam * (e + left + right)).reshape(nb, n_inner)
        else:
            li = np.zeros((nb, n_inner))
        fi = np.asarray(F(Xi, tI), dtype=float).reshape(nb, n_inner)
        inner_means[lo:lo + nb] = _sn_mean(li, fi)
    p = np.exp(logw - logw.max())
    p /= p.sum()
    composed = float(np.sum(p * inner_means))
    composed_se = math.sqrt(float(np.sum(p * p * (inner_means - composed) ** 2)))
    passed = abs(composed - direct) <= gate * math.hypot(direct_se, composed_se)
    return DLRReport(direct, direct_se, composed, composed_se, bool(passed))


# ---------------------------------------------------------------------------
# growth and mixing diagnostics


def tail_fit(maxima, thresholds=(2.0, 2.5, 3.0), power: float = 3.0, weights=None) -> dict:
    """Regress ``log P(max >= a)`` on ``a**power``; returns slope, intercept, R^2 and probabilities."""
    maxima = np.asarray(maxima, dtype=float)
    w = np.ones_like(maxima) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    probs = np.array([w[maxima >= a].sum() for a in thresholds])
    if np.any(probs <= 0):
        raise ValueError("a threshold was never exceeded; use more windows or lower thresholds")
    xa = np.asarray(thresholds, dtype=float) ** power
    ya = np.log(probs)
    slope, icpt = np.polyfit(xa, ya, 1)
    resid = ya - (slope * xa + icpt)
    ss_tot = np.sum((ya - ya.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return {"thresholds": tuple(thresholds), "probabilities": probs, "slope": float(slope),
            "intercept": float(icpt), "r2": float(r2)}


def _window_maxima(values):
    return np.max(np.linalg.norm(values, axis=-1), axis=-1)


def growth_diagnostic(n_windows: int, rng, level: int = 6, dim: int = 1, q: float = 0.9,
                      n_max: int = 16, n_paths: int = 2000, thresholds=(2.0, 2.5, 3.0),
                      s: float = 2.0, chunk: int = 20000, ensemble: WeightedEnsemble | None = None) -> dict:
    """Typical growth of ``max |X_t|`` under the stationary reference.

    Returns a table with

    * ``tail``: the fit of ``log P(max_[0,1] |X| >= a)`` against ``a**(s+1)``
      over ``n_windows`` independent unit windows;
    * ``growth``: the ``q``-quantile ``M_q(n)`` of ``max_{[0, n]} |X|`` for
      ``n = 1..n_max`` over ``n_paths`` long paths, regressed on
      ``(log n)**(1/(s+1))`` (slope and R^2 for ``n >= 2``);
    * ``ensemble_quantile``: the weighted ``q``-quantile of the window
      maxima of ``ensemble`` when one is supplied.
    """
    if n_windows < 10 or n_max < 3:
        raise ValueError("too few windows")
    stream = as_stream(rng)
    maxima = []
    for cid, cnt in chunked(n_windows, chunk):
        g = stream.child(cid).generator()
        vals = sample_batch(PathLawSpec("ou", (0.0, 1.0), level, dim), cnt, g)
        maxima.append(_window_maxima(vals))
    maxima = np.concatenate(maxima)
    tail = tail_fit(maxima, thresholds, s + 1)

    g = stream.child(10 ** 6).generator()
    steps = 2 ** level
    # one long path per sample made of n_max consecutive windows
    x = _ou_paths(g, n_paths, steps * n_max, dim, 1.0 / steps, None)
    per_win = np.linalg.norm(x[:, 1:], axis=-1).reshape(n_paths, n_max, steps).max(axis=-1)
    per_win = np.maximum(per_win, np.linalg.norm(x[:, :1], axis=-1))
    running = np.maximum.accumulate(per_win, axis=1)
    mq = np.quantile(running, q, axis=0)
    n = np.arange(1, n_max + 1)
    xs = np.log(n[1:]) ** (1.0 / (s + 1))
    slope, icpt = np.polyfit(xs, mq[1:], 1)
    resid = mq[1:] - (slope * xs + icpt)
    r2 = 1.0 - np.sum(resid ** 2) / np.sum((mq[1:] - mq[1:].mean()) ** 2)
    out = {"tail": tail, "growth": {"n": n, "quantile": mq, "slope": float(slope), "r2": float(r2)},
           "window_maxima": maxima}
    if ensemble is not None:
        em = _window_maxima(ensemble.values)
        out["ensemble_quantile"] = weighted_quantile(em, q, ensemble.normalized_weights())
    return out


def weighted_quantile(x, q, w) -> float:
    order = np.argsort(x)
    cw = np.cumsum(np.asarray(w)[order])
    cw /= cw[-1]
    return float(np.asarray(x)[order][np.searchsorted(cw, q)])


def mixing_diagnostic(spec: GibbsSpec, F, G, separations, n_paths: int, rng, n_batches: int = 1,
                      width: float = 0.0, workers: int = 1) -> dict:
    """Covariance of ``F`` on ``I = [t0, t0 + width]`` and ``G`` on ``I`` shifted by each separation.

    ``t0 = -T``.  ``F`` and ``G`` map ``(values, times)`` on their interval
    to per-path values.  Each batch is an independent ensemble of
    ``n_paths``; the table reports per-separation covariance estimates with
    SEs, the median of ``|cov|`` over batches, whether those medians are
    nonincreasing, and least-squares slopes of ``log |cov|`` against the
    separation (exponential rate) and against its logarithm (power law).
    """
    tgrid = spec.times
    dt = tgrid[1] - tgrid[0]
    t0 = tgrid[0]
    w = int(round(width / dt))
    seps = [float(s) for s in separations]
    idx = [int(round(s / dt)) for s in seps]
    if any(abs(k * dt - s) > 1e-9 for k, s in zip(idx, seps)) or max(idx) + w > len(tgrid) - 1:
        raise ValueError("separations must lie on the grid inside the window")
    stream = as_stream(rng)
    covs = np.empty((n_batches, len(seps)))
    ses = np.empty((n_batches, len(seps)))
    for bi in range(n_batches):
        ens = sample_mu_T(spec, n_paths, stream.child(bi), workers=workers)
        p = ens.normalized_weights()
        f = np.asarray(F(ens.values[:, :w + 1], tgrid[:w + 1]), dtype=float)
        fm = np.sum(p * f)
        for j, k in enumerate(idx):
            gv = np.asarray(G(ens.values[:, k:k + w + 1], tgrid[k:k + w + 1]), dtype=float)
            gm = np.sum(p * gv)
            prod = (f - fm) * (gv - gm)
            c = float(np.sum(p * prod))
            covs[bi, j] = c
            ses[bi, j] = math.sqrt(float(np.sum(p * p * (prod - c) ** 2)))
    med = np.median(np.abs(covs), axis=0)
    mean_cov = covs.mean(axis=0)
    pos = mean_cov > 0
    sl_exp = sl_pow = float("nan")
    if pos.sum() >= 2:
        sl_exp = float(np.polyfit(np.asarray(seps)[pos], np.log(mean_cov[pos]), 1)[0])
        sl_pow = float(np.polyfit(np.log(np.asarray(seps)[pos]), np.log(mean_cov[pos]), 1)[0])
    return {
        "separations": seps, "cov": covs, "se": ses, "mean_cov": mean_cov,
        "median_abs_cov": med, "nonincreasing": bool(np.all(np.diff(med) <= 0)),
        "exp_slope": sl_exp, "power_exponent": -sl_pow if not math.isnan(sl_pow) else sl_pow,
        "t0": float(t0),
    }
