"""Cluster expansion of the partition function on a partitioned time window.

The window ``[-T, T]`` is cut into ``N`` intervals ``tau_k = (t_k, t_{k+1})``
of length ``b``.  Writing ``e^{-lambda W_T} = prod_{i<j} (1 + f_ij)`` with
``f_ij = e^{-lambda W_{tau_i,tau_j}} - 1`` and ``prod_k pi_b(x_{k+1}, x_k) =
prod_k (1 + g_k)``, the expansion runs over pairs of sets ``(R, S)`` of
pairs and intervals.  ``R`` splits into contours (maximal connected pair
sets) and ``S`` into chains (maximal runs of consecutive intervals).  A
cluster is a timepoint-connected union of contours and chains whose chains
have both endpoints on contour timepoints.

Under the auxiliary measure ``chi`` (``omega``-distributed endpoints,
independent OU bridges in between) clusters with disjoint timepoints are
independent and chains with a free endpoint average to zero, so

    Z_T = 1 + sum over timepoint-disjoint collections of prod K_Gamma,
    K_Gamma = E_chi[kappa_Gamma].

Intervals are numbered ``0..N-1`` and timepoints ``0..N``; interval ``k``
has timepoints ``k`` and ``k + 1``.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .brownian import ou_bridge_batch
from .potentials import GaussExp, HarmonicRef, allocate_pairs, mehler_pi
from .rng import as_stream, chunked, parallel_map

__all__ = [
    "Partition1D",
    "Contour",
    "Chain",
    "Cluster",
    "validate",
    "contours_of",
    "chains_of",
    "decompose_R_S",
    "reassemble",
    "enumerate_clusters",
    "enumerate_components",
    "ChiBatch",
    "sample_chi",
    "kappa_eval",
    "ActivityEstimate",
    "ActivityTable",
    "estimate_activities",
    "estimate_activity",
    "collection_sum",
    "z_cluster_sum",
    "z_direct",
    "ursell",
    "log_z_series",
    "tree_graph_bound_check",
    "random_polymer_instance",
    "convergence_diagnostic",
    "correlation_f",
    "regrouping_identity",
    "write_activity_csv",
]

MAX_N = 8
MAX_WEIGHT = 6


@dataclass(frozen=True)
class Partition1D:
    """``N`` equal intervals of ``[-T, T]``; ``N`` must be even."""

    T: float
    N: int

    def __post_init__(self):
        if self.N < 2 or self.N % 2:
            raise ValueError("N must be an even number >= 2")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def b(self) -> float:
        return 2 * self.T / self.N

    @property
    def timepoints(self) -> np.ndarray:
        return np.linspace(-self.T, self.T, self.N + 1)

    def interval(self, k: int) -> tuple:
        t = self.timepoints
        return float(t[k]), float(t[k + 1])

    def pairs(self) -> list:
        return [(i, j) for i in range(self.N) for j in range(i + 1, self.N)]

    @classmethod
    def from_b(cls, N: int, b: float) -> "Partition1D":
        return cls(N * b / 2, N)


# ---------------------------------------------------------------------------
# combinatorial objects


def _tp_of_intervals(ints) -> frozenset:
    return frozenset(p for k in ints for p in (k, k + 1))


@dataclass(frozen=True)
class Contour:
    """A connected set of interval pairs ``(i, j)``, ``i < j``."""

    pairs: frozenset

    def __post_init__(self):
        ps = frozenset((int(min(p)), int(max(p))) for p in self.pairs)
        if not ps or any(i == j for i, j in ps):
            raise ValueError("a contour needs at least one pair of distinct intervals")
        object.__setattr__(self, "pairs", ps)

    def intervals(self) -> frozenset:
        return frozenset(k for p in self.pairs for k in p)

    def timepoints(self) -> frozenset:
        return _tp_of_intervals(self.intervals())

    def is_connected(self) -> bool:
        return len(_components_of_pairs(self.pairs)) == 1

    def key(self):
        return tuple(sorted(self.pairs))


@dataclass(frozen=True)
class Chain:
    """Consecutive intervals ``tau_start .. tau_{start+length-1}``."""

    start: int
    length: int

    def __post_init__(self):
        if self.start < 0 or self.length < 1:
            raise ValueError("a chain needs start >= 0 and length >= 1")

    def intervals(self) -> frozenset:
        return frozenset(range(self.start, self.start + self.length))

    def timepoints(self) -> frozenset:
        return frozenset(range(self.start, self.start + self.length + 1))

    @property
    def endpoints(self) -> tuple:
        return self.start, self.start + self.length

    def key(self):
        return (self.start, self.length)


@dataclass(frozen=True)
class Cluster:
    """Contours and chains; use :func:`validate` to check the cluster conditions."""

    contours: tuple = ()
    chains: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "contours", tuple(sorted(self.contours, key=Contour.key)))
        object.__setattr__(self, "chains", tuple(sorted(self.chains, key=Chain.key)))

    def intervals(self) -> frozenset:
        """Intervals covered by contours or chains (the support)."""
        out = set()
        for c in self.contours:
            out |= c.intervals()
        for c in self.chains:
            out |= c.intervals()
        return frozenset(out)

    def timepoints(self) -> frozenset:
        out = set()
        for c in self.contours:
            out |= c.timepoints()
        for c in self.chains:
            out |= c.timepoints()
        return frozenset(out)

    def contour_timepoints(self) -> frozenset:
        out = set()
        for c in self.contours:
            out |= c.timepoints()
        return frozenset(out)

    @property
    def weight(self) -> int:
        return len(self.intervals())

    def pairs(self) -> list:
        return sorted(p for c in self.contours for p in c.pairs)

    def chain_intervals(self) -> list:
        return sorted(k for c in self.chains for k in c.intervals())

    def to_dict(self) -> dict:
        return {"contours": [[list(p) for p in c.key()] for c in self.contours],
                "chains": [list(c.key()) for c in self.chains]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text) -> "Cluster":
        d = json.loads(text) if isinstance(text, str) else text
        return cls(tuple(Contour(frozenset(tuple(p) for p in c)) for c in d["contours"]),
                   tuple(Chain(*c) for c in d["chains"]))

    @property
    def id(self) -> str:
        return self.to_json()


def validate(cl: Cluster, N: int | None = None) -> list:
    """Names of the cluster conditions that ``cl`` violates (empty when valid)."""
    bad = []
    if N is not None:
        if any(j >= N for c in cl.contours for _, j in c.pairs) or any(
                c.start + c.length > N for c in cl.chains):
            bad.append("bounds")
    if not cl.contours:
        bad.append("no_contour")
    if any(not c.is_connected() for c in cl.contours):
        bad.append("contour_connected")
    for a, b in itertools.combinations(cl.contours, 2):
        if a.intervals() & b.intervals():
            bad.append("contours_interval_disjoint")
            break
    for a, b in itertools.combinations(cl.chains, 2):
        if a.timepoints() & b.timepoints():
            bad.append("chains_timepoint_disjoint")
            break
    elems = [e.timepoints() for e in cl.contours + cl.chains]
    if elems and not _sets_connected(elems):
        bad.append("connected")
    tp = cl.contour_timepoints()
    if any(e not in tp for c in cl.chains for e in c.endpoints):
        bad.append("loose_end")
    return bad


def _sets_connected(sets) -> bool:
    n = len(sets)
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(n):
            if j not in seen and sets[i] & sets[j]:
                seen.add(j)
                stack.append(j)
    return len(seen) == n


def _components_of_pairs(pairs) -> list:
    """Connected components of a pair set (pairs are linked when they share an interval)."""
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in pairs:
        parent.setdefault(i, i)
        parent.setdefault(j, j)
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    groups = {}
    for p in pairs:
        groups.setdefault(find(p[0]), set()).add(p)
    return [frozenset(g) for g in groups.values()]


def contours_of(R) -> list:
    return [Contour(g) for g in _components_of_pairs(frozenset(R))]


def chains_of(S) -> list:
    """Maximal runs of consecutive intervals in ``S``."""
    S = sorted(set(int(k) for k in S))
    out = []
    for k in S:
        if out and out[-1][0] + out[-1][1] == k:
            out[-1][1] += 1
        else:
            out.append([k, 1])
    return [Chain(s, n) for s, n in out]


@dataclass(frozen=True)
class Component:
    cluster: Cluster
    loose: bool


def decompose_R_S(R, S) -> list:
    """Split ``(R, S)`` into timepoint-connected components.

    Each component is a :class:`Component` whose ``cluster`` holds its
    contours and chains; ``loose`` is true when some chain endpoint is not a
    contour timepoint (such components include lone chains).
    """
    elems = [("c", c) for c in contours_of(R)] + [("h", h) for h in chains_of(S)]
    n = len(elems)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tps = [e.timepoints() for _, e in elems]
    for i in range(n):
        for j in range(i + 1, n):
            if tps[i] & tps[j]:
                parent[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(elems[i])
    out = []
    for members in groups.values():
        cl = Cluster(tuple(e for t, e in members if t == "c"), tuple(e for t, e in members if t == "h"))
        tp = cl.contour_timepoints()
        loose = any(p not in tp for h in cl.chains for p in h.endpoints)
        out.append(Component(cl, loose))
    out.sort(key=lambda c: c.cluster.id)
    return out


def reassemble(components) -> tuple:
    """Inverse of :func:`decompose_R_S`: the union ``(R, S)`` of the components."""
    R, S = set(), set()
    for comp in components:
        cl = comp.cluster if isinstance(comp, Component) else comp
        R |= set(cl.pairs())
        S |= set(cl.chain_intervals())
    return frozenset(R), frozenset(S)


# ---------------------------------------------------------------------------
# enumeration


@lru_cache(maxsize=None)
def _connected_graphs(k: int) -> tuple:
    """Edge sets of connected spanning graphs on vertices ``0..k-1``."""
    edges = list(itertools.combinations(range(k), 2))
    out = []
    for mask in range(1, 1 << len(edges)):
        es = [edges[e] for e in range(len(edges)) if mask >> e & 1]
        if len({v for e in es for v in e}) == k and len(_components_of_pairs(es)) == 1:
            out.append(tuple(es))
    return tuple(out)


def _set_partitions_min2(items):
    """Set partitions of ``items`` into blocks of size at least two."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for r in range(1, len(rest) + 1):
        for mates in itertools.combinations(rest, r):
            block = (first,) + mates
            remaining = [x for x in rest if x not in mates]
            for tail in _set_partitions_min2(remaining):
                yield [block] + tail


def _valid_chain_sets(N: int, contour_tp: frozenset, budget_ints: frozenset, max_weight: int):
    """Chain sets whose runs end on contour timepoints, within the weight budget."""
    runs = [Chain(s, n) for s in range(N) for n in range(1, N - s + 1)
            if s in contour_tp and s + n in contour_tp]
    out = [()]

    def extend(start_idx, chosen, used_tp, ints):
        for i in range(start_idx, len(runs)):
            r = runs[i]
            if r.timepoints() & used_tp:
                continue
            new_ints = ints | r.intervals()
            if len(new_ints) > max_weight:
                continue
            combo = chosen + (r,)
            out.append(combo)
            extend(i + 1, combo, used_tp | r.timepoints(), new_ints)

    extend(0, (), frozenset(), budget_ints)
    return out


def enumerate_clusters(partition, max_weight: int = MAX_WEIGHT) -> list:
    """All clusters on ``N`` intervals with support size at most ``max_weight``.

    Ordered deterministically by support size and then canonical JSON.
    """
    N = partition.N if isinstance(partition, Partition1D) else int(partition)
    if N > MAX_N or max_weight > MAX_WEIGHT:
        raise ValueError(f"exhaustive enumeration is limited to N <= {MAX_N} and weight <= {MAX_WEIGHT}")
    found = []
    for size in range(2, min(max_weight, N) + 1):
        for A in itertools.combinations(range(N), size):
            A = frozenset(A)
            ctp = _tp_of_intervals(A)
            chain_sets = _valid_chain_sets(N, ctp, A, max_weight)
            for blocks in _set_partitions_min2(sorted(A)):
                block_tps = [_tp_of_intervals(b) for b in blocks]
                for chains in chain_sets:
                    if not _sets_connected(block_tps + [c.timepoints() for c in chains]):
                        continue
                    graphs = [[tuple((b[u], b[v]) for u, v in g) for g in _connected_graphs(len(b))]
                              for b in blocks]
                    for combo in itertools.product(*graphs):
                        found.append(Cluster(tuple(Contour(frozenset(g)) for g in combo), tuple(chains)))
    found.sort(key=lambda c: (c.weight, c.id))
    return found


def enumerate_components(N: int) -> list:
    """Every component that arises in some ``(R, S)`` on ``N`` intervals (brute force, ``N <= 4``)."""
    if N > 4:
        raise ValueError("brute-force component enumeration is limited to N <= 4")
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    seen = {}
    for rm in range(1 << len(pairs)):
        R = [pairs[e] for e in range(len(pairs)) if rm >> e & 1]
        for sm in range(1 << N):
            S = [k for k in range(N) if sm >> k & 1]
            for comp in decompose_R_S(R, S):
                seen.setdefault(comp.cluster.id, comp)
    return sorted(seen.values(), key=lambda c: c.cluster.id)


# ---------------------------------------------------------------------------
# the auxiliary measure and activities


@dataclass(eq=False)
class ChiBatch:
    """A batch of configurations under ``chi``.

    Attributes
    ----------
    ends : (P, N+1, d) endpoint values
    values : (P, N*m+1, d) concatenated path
    pair_energy : (P, N, N) pair energies ``W_{tau_i,tau_j}`` (upper triangle)
    chain_factor : (P, N) ``pi_b(x_{k+1}, x_k) - 1``
    """

    ends: np.ndarray
    values: np.ndarray
    times: np.ndarray
    pair_energy: np.ndarray
    chain_factor: np.ndarray
    steps_per_interval: int

    @property
    def n(self) -> int:
        return len(self.ends)

    def w_total(self) -> np.ndarray:
        return self.pair_energy.sum(axis=(-2, -1))


def _blocks_batch(values, times, W, N, m):
    dx = np.diff(values, axis=1)
    left = values[:, :-1]
    tl = times[:-1]
    K = W.value(left[:, :, None, :] - left[:, None, :, :], (tl[:, None] - tl[None, :])[None])
    G = np.einsum("pad,pbd->pab", dx, dx) * K
    P = len(values)
    return G.reshape(P, N, m, N, m).sum(axis=(2, 4))


def chi_from_segments(partition: Partition1D, ends, segments, W, ext) -> ChiBatch:
    """Build a :class:`ChiBatch` from endpoints and per-interval bridge values.

    ``segments`` has shape ``(P, N, m+1, d)`` with ``segments[:, k, 0] = ends[:, k]``
    and ``segments[:, k, -1] = ends[:, k+1]``.
    """
    P, N, m1, d = segments.shape
    m = m1 - 1
    vals = np.empty((P, N * m + 1, d))
    for k in range(N):
        vals[:, k * m:(k + 1) * m + 1] = segments[:, k]
    times = np.linspace(-partition.T, partition.T, N * m + 1)
    J = _blocks_batch(vals, times, W, N, m)
    pe = allocate_pairs(J)
    g = mehler_pi(ext, partition.b, ends[:, 1:], ends[:, :-1]) - 1.0
    return ChiBatch(ends, vals, times, pe, g, m)


def sample_chi(partition: Partition1D, n: int, rng, W: GaussExp, ext: HarmonicRef | None = None,
               level: int = 4) -> ChiBatch:
    """Draw ``n`` configurations: ``omega`` endpoints and OU bridges with ``2**level`` steps per interval."""
    ext = ext or HarmonicRef(W.dim)
    g = rng if isinstance(rng, np.random.Generator) else as_stream(rng).generator()
    N = partition.N
    ends = ext.omega_sample(g, (n, N + 1))
    m = 2 ** level
    segs = np.empty((n, N, m + 1, ext.dim))
    for k in range(N):
        segs[:, k] = ou_bridge_batch(n, partition.interval(k), level, ends[:, k], ends[:, k + 1], g)
    return chi_from_segments(partition, ends, segs, W, ext)


def kappa_eval(cluster: Cluster, sample: ChiBatch, lam: float) -> np.ndarray:
    """``kappa_Gamma`` for every configuration of ``sample``.

    Product of ``exp(-lambda W_{tau_i,tau_j}) - 1`` over the contour pairs and
    of ``pi_b(x_{k+1}, x_k) - 1`` over the chain intervals.
    """
    N = sample.chain_factor.shape[1]
    pairs = cluster.pairs()
    ints = cluster.chain_intervals()
    if any(j >= N for _, j in pairs) or any(k >= N for k in ints):
        raise ValueError("cluster refers to intervals missing from the sample")
    out = np.ones(sample.n)
    for i, j in pairs:
        out = out * np.expm1(-lam * sample.pair_energy[:, i, j])
    for k in ints:
        out = out * sample.chain_factor[:, k]
    return out


@dataclass(frozen=True)
class ActivityEstimate:
    cluster: Cluster
    K: float
    se: float
    n: int


@dataclass(eq=False)
class ActivityTable:
    """Activities of many clusters estimated on common ``chi`` samples.

    ``cov`` is the covariance matrix of the per-sample ``kappa`` values,
    used for delta-method errors of functions of the activities.
    """

    clusters: list
    K: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    n: int
    lam: float = 0.0
    extras: dict = field(default_factory=dict)

    def __getitem__(self, i) -> ActivityEstimate:
        return ActivityEstimate(self.clusters[i], float(self.K[i]), float(self.se[i]), self.n)

    def __len__(self):
        return len(self.clusters)

    def as_dict(self) -> dict:
        return {c.id: float(k) for c, k in zip(self.clusters, self.K)}


def _activity_chunk(task):
    partition, clusters, lam, W, ext, level, stream, count = task
    batch = sample_chi(partition, count, stream.generator(), W, ext, level)
    kap = np.stack([kappa_eval(c, batch, lam) for c in clusters], axis=1) if clusters else np.zeros((count, 0))
    direct = np.exp(-lam * batch.w_total()) * np.prod(1.0 + batch.chain_factor, axis=1)
    return kap.sum(axis=0), kap.T @ kap, count, direct.sum(), (direct * direct).sum()


def estimate_activities(partition: Partition1D, clusters, lam: float, W: GaussExp, n_samples: int, rng,
                        ext: HarmonicRef | None = None, level: int = 4, workers: int = 1,
                        chunk: int = 2000) -> ActivityTable:
    """Monte Carlo activities ``K_Gamma = E_chi[kappa_Gamma]`` for a list of clusters.

    All clusters share the same samples.  The direct estimate of
    ``E_chi[exp(-lambda W_T) prod_k pi_b]`` from the same samples is stored in
    ``extras`` (``z_direct``, ``z_direct_se``).
    """
    ext = ext or HarmonicRef(W.dim)
    clusters = list(clusters)
    stream = as_stream(rng)
    tasks = [(partition, clusters, lam, W, ext, level, stream.child(cid), cnt)
             for cid, cnt in chunked(n_samples, chunk)]
    parts = parallel_map(_activity_chunk, tasks, workers)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    K = s1 / n
    cov = (s2 - n * np.outer(K, K)) / max(n - 1, 1)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0) / n)
    d1 = sum(p[3] for p in parts) / n
    d2 = sum(p[4] for p in parts) / n
    zse = math.sqrt(max(d2 - d1 * d1, 0.0) * n / max(n - 1, 1) / n)
    return ActivityTable(clusters, K, se, cov, n, lam, {"z_direct": d1, "z_direct_se": zse})


def estimate_activity(cluster: Cluster, partition: Partition1D, lam: float, W: GaussExp, n_samples: int, rng,
                      **kw) -> ActivityEstimate:
    """Activity of one cluster (no validation, so loose-end objects can be probed)."""
    return estimate_activities(partition, [cluster], lam, W, n_samples, rng, **kw)[0]


def z_direct(partition: Partition1D, lam: float, W: GaussExp, n_samples: int, rng,
             ext: HarmonicRef | None = None, level: int = 4, workers: int = 1) -> tuple:
    """Direct estimate of ``Z_T = E_chi[exp(-lambda W_T) prod_k pi_b(x_{k+1}, x_k)]`` with its SE."""
    tab = estimate_activities(partition, [], lam, W, n_samples, rng, ext, level, workers)
    return tab.extras["z_direct"], tab.extras["z_direct_se"]


# ---------------------------------------------------------------------------
# polymer sums


def _tp_mask(cl) -> int:
    """Timepoint bit set of a cluster; plain integers are taken as ready-made masks."""
    if isinstance(cl, (int, np.integer)):
        return int(cl)
    tps = cl.timepoints() if isinstance(cl, Cluster) else cl
    m = 0
    for p in tps:
        m |= 1 << p
    return m


def collection_sum(masks, K, available: int | None = None) -> float:
    """``1 + sum over collections of pairwise disjoint masks of prod K``.

    ``masks`` are integer bit sets (timepoints).  Exact, by recursion on the
    lowest available bit: a collection either has a member containing it or not.
    """
    merged = {}
    for m, k in zip(masks, K):
        merged[int(m)] = merged.get(int(m), 0.0) + float(k)  # equal masks enter additively
    full = 0
    for m in merged:
        full |= m
    avail0 = full if available is None else available
    by_low = {}
    for m, k in merged.items():
        low = m & -m
        by_low.setdefault(low, []).append((m, k))

    @lru_cache(maxsize=None)
    def Z(avail):
        if avail == 0:
            return 1.0
        low = avail & -avail
        total = Z(avail & ~low)
        for m, k in by_low.get(low, ()):
            if m & avail == m:
                total += k * Z(avail & ~m)
        return total

    return Z(avail0 & full) if full else 1.0


@dataclass(frozen=True)
class ZResult:
    value: float
    se: float
    collections: list


def _collections(masks, K, limit):
    out = []

    def rec(start, used, chosen):
        if len(out) >= limit:
            return
        for i in range(start, len(masks)):
            if masks[i] & used == 0:
                combo = chosen + (i,)
                out.append(combo)
                rec(i + 1, used | masks[i], combo)
                if len(out) >= limit:
                    return

    rec(0, 0, ())
    return out


def z_cluster_sum(clusters, activities, max_terms: int = 1000, cov=None, n: int | None = None) -> ZResult:
    """Cluster representation ``1 + sum over timepoint-disjoint collections of prod K``.

    ``activities`` is an :class:`ActivityTable` or a sequence of numbers
    aligned with ``clusters``.  The standard error uses the delta method
    with the activity covariance; ``collections`` lists up to ``max_terms``
    included collections as tuples of cluster indices.
    """
    if isinstance(activities, ActivityTable):
        K = activities.K
        cov = activities.cov if cov is None else cov
        n = activities.n if n is None else n
    else:
        K = np.asarray(activities, dtype=float)
    if len(K) != len(clusters):
        raise ValueError("missing activity for some cluster")
    masks = [_tp_mask(c) for c in clusters]
    full = 0
    for m in masks:
        full |= m
    value = collection_sum(masks, K)
    se = 0.0
    if cov is not None and n and len(K):
        grad = np.array([collection_sum(masks, K, full & ~m) for m in masks])
        # dZ/dK_i = sum over collections containing i of the other factors
        se = math.sqrt(max(float(grad @ cov @ grad) / n, 0.0))
    return ZResult(value, se, _collections(masks, K, max_terms))


def ursell(incompat) -> float:
    """Ursell function of ``n <= 7`` polymers with symmetric incompatibility matrix.

    Equals the signed count ``sum over connected spanning subgraphs G of H of (-1)^{|E(G)|}``,
    ``H`` being the incompatibility graph (diagonal ignored).
    """
    H = np.asarray(incompat, dtype=bool)
    n = H.shape[0]
    if n > 7:
        raise ValueError("ursell is limited to n <= 7")
    if n == 1:
        return 1.0
    adj = [0] * n
    for i in range(n):
        for j in range(n):
            if i != j and H[i, j]:
                adj[i] |= 1 << j

    @lru_cache(maxsize=None)
    def A(S):
        # 1 if the induced graph on S has no edges
        s = S
        while s:
            v = (s & -s).bit_length() - 1
            if adj[v] & S:
                return 0
            s &= s - 1
        return 1

    @lru_cache(maxsize=None)
    def C(S):
        low = S & -S
        if S == low:
            return 1
        rest = S & ~low
        total = A(S)
        sub = rest
        while True:
            T = sub | low
            if T != S:
                total -= C(T) * A(S & ~T)
            if sub == 0:
                break
            sub = (sub - 1) & rest
        return total

    return float(C((1 << n) - 1))


def _incompat_matrix(masks):
    n = len(masks)
    return np.array([[(masks[i] & masks[j]) != 0 for j in range(n)] for i in range(n)])


def log_z_series(clusters, activities, order: int = 6, max_terms: int = 10 ** 6) -> float:
    """``sum_{n <= order} (1/n!) sum over ordered n-tuples of phi^T prod K``.

    Tuples are enumerated as multisets weighted by ``1 / prod m_i!``;
    every cluster is incompatible with itself.  Raises ``ValueError`` when
    the number of multisets exceeds ``max_terms``.
    """
    if order > 7:
        raise ValueError("order is limited to 7")
    n_terms = sum(math.comb(len(clusters) + n - 1, n) for n in range(1, order + 1))
    if n_terms > max_terms:
        raise ValueError(f"the series has {n_terms} terms, more than max_terms={max_terms}")
    K = np.asarray(activities.K if isinstance(activities, ActivityTable) else activities, dtype=float)
    masks = [_tp_mask(c) for c in clusters]
    total = 0.0
    idx = range(len(masks))
    for n in range(1, order + 1):
        for combo in itertools.combinations_with_replacement(idx, n):
            prodK = float(np.prod(K[list(combo)]))
            if prodK == 0.0:
                continue
            mult = 1
            for _, grp in itertools.groupby(combo):
                mult *= math.factorial(len(list(grp)))
            phi = ursell(_incompat_matrix([masks[i] for i in combo]))
            total += phi * prodK / mult
    return total


@dataclass(frozen=True)
class TreeGraphReport:
    lhs: float
    rhs: float
    product: float
    tree_sum: float
    holds: bool


def random_polymer_instance(g, n_max: int = 5, n_points: int = 6, k_max: float = 0.1) -> tuple:
    """Toy polymer system: ``(masks, K)`` with random nonempty point sets and ``|K| <= k_max``."""
    n = int(g.integers(1, n_max + 1))
    masks = [int(g.integers(1, 1 << n_points)) for _ in range(n)]
    K = g.uniform(-k_max, k_max, n)
    return masks, K


def tree_graph_bound_check(r: int, w) -> TreeGraphReport:
    """Check ``sum_{connected G} prod w <= prod_{i != j} (1 + w_ij) * sum_{trees} prod w``.

    The product runs over ordered pairs ``i != j``; ``w`` is a symmetric
    ``r x r`` matrix with entries in ``[0, 1]``.
    """
    if r > 6:
        raise ValueError("r is limited to 6")
    w = np.asarray(w, dtype=float)
    if w.shape != (r, r) or np.any(w < 0) or np.any(w > 1):
        raise ValueError("weights must form an r x r matrix with entries in [0, 1]")
    lhs = 0.0
    trees = 0.0
    for es in _connected_graphs(r) if r > 1 else ((),):
        pw = float(np.prod([w[i, j] for i, j in es])) if es else 1.0
        lhs += pw
        if len(es) == r - 1:
            trees += pw
    prod = float(np.prod([1.0 + w[i, j] for i in range(r) for j in range(r) if i != j]))
    return TreeGraphReport(lhs, prod * trees, prod, trees, lhs <= prod * trees * (1 + 1e-12))


# ---------------------------------------------------------------------------
# diagnostics


def _bound_exponent(cl: Cluster) -> int:
    return len(cl.pairs()) + len(cl.chain_intervals())


def _D_product(cl: Cluster, b: float, delta: float) -> float:
    return float(np.prod([(1.0 + b * abs(i - j - 1)) ** (-delta) for i, j in cl.pairs()]))


@dataclass(frozen=True)
class ConvergenceReport:
    eps: float
    C_fit: float
    bounds: np.ndarray
    violations: list
    violation_fraction: float
    weight_sums: dict
    eta: float


def convergence_diagnostic(activities: ActivityTable, b: float, delta: float = 1.5, eps: float | None = None,
                           lam: float | None = None, gap: float = 1.0, anchor: int = 0,
                           quantile: float = 0.95) -> ConvergenceReport:
    """Compare ``|K_Gamma|`` with ``prod_{pairs} eps D(i, j) * eps^{sum |chain|}``.

    ``D(i, j) = (1 + b |i - j - 1|)^{-delta}``.  When ``eps`` is not given it
    is calibrated as the larger of the ``quantile`` of the per-cluster
    exponents ``eps_Gamma = (|K| / prod D)^{1/e_Gamma}`` and their maximum
    computed from ``|K| - 2 SE``.  The constant ``C`` in
    ``eps = |lambda|^{gap / (gap + C)}`` is then reported.  Violations are
    ``(cluster id, |K|, bound, se)`` tuples.  ``weight_sums`` maps a support
    size ``n`` to the sum of ``|K|`` over clusters whose support contains
    interval ``anchor``; ``eta`` is the fitted geometric rate of these sums.
    """
    cls = activities.clusters
    K = np.abs(activities.K)
    se = activities.se
    lam = activities.lam if lam is None else lam
    expo = np.array([_bound_exponent(c) for c in cls], dtype=float)
    Dp = np.array([_D_product(c, b, delta) for c in cls])
    if eps is None:
        with np.errstate(divide="ignore"):
            e_hat = (K / Dp) ** (1.0 / expo)
            e_low = (np.maximum(K - 2 * se, 0.0) / Dp) ** (1.0 / expo)
        pos = K > 0
        eps = float(max(np.quantile(e_hat[pos], quantile) if pos.any() else 0.0,
                        e_low.max() if len(e_low) else 0.0))
    bounds = Dp * eps ** expo
    viol = [(c.id, float(k), float(bd), float(s)) for c, k, bd, s in zip(cls, K, bounds, se) if k > bd]
    frac = len(viol) / len(cls) if cls else 0.0
    C_fit = float("nan")
    if lam and 0 < eps < 1 and abs(lam) < 1:
        C_fit = gap * math.log(abs(lam)) / math.log(eps) - gap
    sums = {}
    for c, k in zip(cls, K):
        if anchor in c.intervals():
            sums[c.weight] = sums.get(c.weight, 0.0) + float(k)
    ns = sorted(n for n in sums if sums[n] > 0)
    eta = float("nan")
    if len(ns) >= 2:
        eta = float(math.exp(np.polyfit(ns, np.log([sums[n] for n in ns]), 1)[0]))
    return ConvergenceReport(eps, C_fit, bounds, viol, frac, sums, eta)


def correlation_f(clusters, activities, U) -> float:
    """``Z^U / Z`` where ``Z^U`` drops every cluster whose support meets the interval set ``U``."""
    K = np.asarray(activities.K if isinstance(activities, ActivityTable) else activities, dtype=float)
    U = set(U)
    masks = [_tp_mask(c) for c in clusters]
    Z = collection_sum(masks, K)
    if Z <= 0:
        raise ValueError("partition function estimate is not positive")
    keep = [i for i, c in enumerate(clusters) if not (c.intervals() & U)]
    ZU = collection_sum([masks[i] for i in keep], K[keep]) if keep else 1.0
    return ZU / Z


def regrouping_identity(N: int, f: dict, g, components=None) -> tuple:
    """Three evaluations of ``prod_{i<j} (1 + f_ij) prod_k (1 + g_k)``.

    Returns ``(product, sum over all (R, S) of prod f prod g, sum over
    collections of timepoint-disjoint components of the product of component
    weights)``.  The last uses :func:`enumerate_components` and the exact
    collection recursion.
    """
    g = np.asarray(g, dtype=float)
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    prod = math.prod(1.0 + f[p] for p in pairs) * math.prod(1.0 + g)
    direct = 0.0
    for rm in range(1 << len(pairs)):
        fr = math.prod(f[pairs[e]] for e in range(len(pairs)) if rm >> e & 1)
        for sm in range(1 << N):
            direct += fr * math.prod(g[k] for k in range(N) if sm >> k & 1)
    if components is None:
        masks, pidx, cidx = _component_table(N)
    else:
        masks, pidx, cidx = _table_of(N, components)
    fv = np.append([f[p] for p in pairs], 1.0)  # the last slot pads short rows
    gv = np.append(g, 1.0)
    weights = np.prod(fv[pidx], axis=1) * np.prod(gv[cidx], axis=1)
    return prod, direct, collection_sum(masks, weights, (1 << (N + 1)) - 1)


def _table_of(N: int, components) -> tuple:
    """Masks and padded pair / chain index arrays for component weights."""
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    pos = {p: e for e, p in enumerate(pairs)}
    comps = [c.cluster if isinstance(c, Component) else c for c in components]
    width_p = max([len(c.pairs()) for c in comps] + [1])
    width_c = max([len(c.chain_intervals()) for c in comps] + [1])
    pidx = np.full((len(comps), width_p), len(pairs))
    cidx = np.full((len(comps), width_c), N)
    for r, cl in enumerate(comps):
        for e, p in enumerate(cl.pairs()):
            pidx[r, e] = pos[p]
        for e, k in enumerate(cl.chain_intervals()):
            cidx[r, e] = k
    return [_tp_mask(c) for c in comps], pidx, cidx


@lru_cache(maxsize=None)
def _component_table(N: int) -> tuple:
    return _table_of(N, enumerate_components(N))


def write_activity_csv(table: ActivityTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "weight", "K", "se", "n"])
        for c, k, s in zip(table.clusters, table.K, table.se):
            w.writerow([c.id, c.weight, "%.17g" % k, "%.17g" % s, table.n])
