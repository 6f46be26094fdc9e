"""Exact samplers for Brownian motion, bridges and the harmonic OU diffusion.

The OU process here solves ``dX = -X dt + dB``: it is the ground-state
diffusion of the harmonic reference potential, with stationary law
``N(0, I/2)`` and covariance ``exp(-|t - s|) / 2`` per coordinate.

Also provides the pathwise functional ``N_[s,t](X) = ||X||_gamma + ||XX||_2gamma``
and its weighted window sum.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import zeta

from .rng import as_stream
from .rough import GridPath, Scheme, Step2RoughPath, holder_norm, lift

__all__ = [
    "PathLawSpec",
    "generator",
    "sample",
    "sample_batch",
    "ou_windows",
    "ou_bridge_batch",
    "NFunctional",
    "n_functional",
    "CalN",
    "cal_n",
]

LAWS = ("bm", "bridge", "ou", "ou_bridge")


def generator(rng) -> np.random.Generator:
    """Coerce an int seed, :class:`RngStream` or ``Generator`` to a ``Generator``."""
    if isinstance(rng, np.random.Generator):
        return rng
    return as_stream(rng).generator()


@dataclass(frozen=True)
class PathLawSpec:
    """Law of a sampled path on a dyadic grid.

    Parameters
    ----------
    law : {'bm', 'bridge', 'ou', 'ou_bridge'}
        Brownian motion, Brownian bridge, OU process, OU bridge.
    interval : tuple of float
    level : int
        The grid has ``2**level`` steps.
    dim : int
    start : sequence of float or None
        Initial point.  For ``'ou'`` a ``None`` start means the stationary
        law ``N(0, I/2)``; for ``'bm'`` it means the origin.
    end : sequence of float or None
        Terminal point, required for the bridge laws.
    """

    law: str = "bm"
    interval: tuple = (0.0, 1.0)
    level: int = 10
    dim: int = 1
    start: tuple | None = None
    end: tuple | None = None

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"unknown law {self.law!r}; expected one of {LAWS}")
        s, t = (float(v) for v in self.interval)
        if not t > s:
            raise ValueError("interval must have positive length")
        if self.level < 0 or self.dim < 1:
            raise ValueError("level must be >= 0 and dim >= 1")
        object.__setattr__(self, "interval", (s, t))
        for name in ("start", "end"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(c) for c in np.atleast_1d(v))
                if len(v) != self.dim:
                    raise ValueError(f"{name} must have {self.dim} components")
                object.__setattr__(self, name, v)
        if self.law in ("bridge", "ou_bridge"):
            if self.start is None or self.end is None:
                raise ValueError("bridge laws need both start and end points")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PathLawSpec":
        d = json.loads(text) if isinstance(text, str) else dict(text)
        d["interval"] = tuple(d["interval"])
        return cls(**d)


def _bm_increments(g, n_paths, n, dim, dt):
    return g.normal(0.0, math.sqrt(dt), size=(n_paths, n, dim))


def _ou_paths(g, n_paths, n, dim, dt, start):
    decay = math.exp(-dt)
    noise_sd = math.sqrt((1.0 - math.exp(-2.0 * dt)) / 2.0)
    x = np.empty((n_paths, n + 1, dim))
    if start is None:
        x[:, 0] = g.normal(0.0, math.sqrt(0.5), size=(n_paths, dim))
    else:
        x[:, 0] = start
    z = g.normal(0.0, noise_sd, size=(n_paths, n, dim))
    for j in range(n):
        x[:, j + 1] = decay * x[:, j] + z[:, j]
    return x


def sample_batch(spec: PathLawSpec, n_paths: int, rng) -> np.ndarray:
    """Sample ``n_paths`` paths; returns values of shape ``(n_paths, 2**level + 1, dim)``."""
    g = generator(rng)
    s, t = spec.interval
    n = 2 ** spec.level
    dt = (t - s) / n
    rel = (np.arange(n + 1) * dt)[None, :, None]
    if spec.law in ("bm", "bridge"):
        x0 = np.zeros(spec.dim) if spec.start is None else np.asarray(spec.start)
        b = np.zeros((n_paths, n + 1, spec.dim))
        np.cumsum(_bm_increments(g, n_paths, n, spec.dim, dt), axis=1, out=b[:, 1:])
        if spec.law == "bm":
            return x0 + b
        y = np.asarray(spec.end)
        out = x0 + b - (rel / (t - s)) * (b[:, -1:, :] - (y - x0))
        out[:, 0] = x0
        out[:, -1] = y
        return out
    z = _ou_paths(g, n_paths, n, spec.dim, dt, spec.start)
    if spec.law == "ou":
        return z
    y = np.asarray(spec.end)
    weight = np.sinh(rel) / math.sinh(t - s)
    out = z + weight * (y - z[:, -1:, :])
    out[:, -1] = y
    return out


def sample(spec: PathLawSpec, rng) -> GridPath:
    """Sample one path of the given law."""
    return GridPath(spec.interval, spec.level, sample_batch(spec, 1, rng)[0])


def ou_bridge_batch(n, interval, level, x, y, g):
    """Batch of OU bridges with per-path endpoints ``x`` and ``y`` (shape ``(n, d)``).

    Uses the exact conditioning ``Z_t + sinh(t - s) / sinh(T - s) (y - Z_T)``
    of an OU path ``Z`` started at ``x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = x.shape[1]
    s, t = interval
    m = 2 ** level
    spec = PathLawSpec("ou", interval, level, d, start=tuple(np.zeros(d)))
    z = sample_batch(spec, n, g)  # OU started at the origin
    rel = (np.arange(m + 1) * (t - s) / m)[None, :, None]
    z = z + np.exp(-rel) * x[:, None, :]  # OU started at x
    weight = np.sinh(rel) / math.sinh(t - s)
    out = z + weight * (y[:, None, :] - z[:, -1:, :])
    out[:, 0] = x
    out[:, -1] = y
    return out


def ou_windows(ks, level: int, dim: int, rng, start=None) -> list:
    """Consecutive unit windows ``[k, k+1]`` of one stationary OU path.

    Returns a list of ``(k, GridPath)``; windows join continuously.
    """
    ks = [int(k) for k in ks]
    if not ks or any(b - a != 1 for a, b in zip(ks, ks[1:])):
        raise ValueError("windows must be a nonempty run of consecutive integers")
    g = generator(rng)
    n = 2 ** level
    x = _ou_paths(g, 1, n * len(ks), dim, 1.0 / n, start)[0]
    return [(k, GridPath((k, k + 1), level, x[i * n:(i + 1) * n + 1])) for i, k in enumerate(ks)]


@dataclass(frozen=True)
class NFunctional:
    """``N_[s,t](X) = ||X||_gamma + ||XX||_2gamma`` on dyadic pairs."""

    interval: tuple
    gamma: float
    value: float


def n_functional(rp: Step2RoughPath, interval=None, gamma: float = 0.4) -> NFunctional:
    """Pathwise size functional of a lifted path over a grid interval."""
    if not isinstance(rp, Step2RoughPath):
        rp = lift(rp, Scheme.ITO)
    base = rp.base
    s, t = base.interval if interval is None else interval
    a, b = base.index_of(s), base.index_of(t)
    if b < a:
        raise ValueError("interval endpoints out of order")
    p = holder_norm(rp, gamma, mode="dyadic", which="path", a=a, b=b).value
    q = holder_norm(rp, 2 * gamma, mode="dyadic", which="area", a=a, b=b).value
    return NFunctional((s, t), gamma, p + q)


@dataclass(frozen=True)
class CalN:
    """Weighted window sum with the weight mass of the omitted windows."""

    value: float
    tail_weight: float
    windows: tuple = field(default_factory=tuple)


def cal_n(rps, alpha: float, p: float, gamma: float = 0.4) -> CalN:
    """``sum_k (1 + |k|)**-alpha * N_[k,k+1]**p`` over the supplied windows.

    Parameters
    ----------
    rps : mapping or sequence of ``(k, path)``
        Lifted (or plain) paths on the unit windows ``[k, k+1]``.
    alpha, p : float
        Decay exponent (``> 1``) and power (``>= 1``).

    Notes
    -----
    ``tail_weight`` is the total weight ``sum (1 + |k|)**-alpha`` over all
    integers *not* supplied, computed exactly from the Hurwitz zeta function.
    """
    if alpha <= 1 or p < 1:
        raise ValueError("need alpha > 1 and p >= 1")
    items = list(rps.items()) if isinstance(rps, dict) else list(rps)
    if not items:
        raise ValueError("empty window list")
    total = 0.0
    ks = []
    for k, rp in items:
        k = int(k)
        ks.append(k)
        total += (1.0 + abs(k)) ** (-alpha) * n_functional(rp, (k, k + 1), gamma).value ** p
    full = 1.0 + 2.0 * float(zeta(alpha, 2.0))
    used = sum((1.0 + abs(k)) ** (-alpha) for k in set(ks))
    return CalN(total, max(full - used, 0.0), tuple(ks))
