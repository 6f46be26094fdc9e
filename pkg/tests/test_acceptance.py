"""Acceptance criteria.

Each test records one ``PASS``/``FAIL`` line (printed in the terminal
summary, see ``conftest.py``) and then asserts the same condition.
"""
import math
import os
import time

import numpy as np
import pytest

from roughgibbs.brownian import PathLawSpec, sample_batch
from roughgibbs.cluster import (
    Chain,
    Cluster,
    Contour,
    Partition1D,
    enumerate_clusters,
    estimate_activities,
    estimate_activity,
    log_z_series,
    random_polymer_instance,
    regrouping_identity,
    tree_graph_bound_check,
    ursell,
    z_cluster_sum,
)
from roughgibbs.currents import GridCurrent, pair_w
from roughgibbs.fields import Constant, FourierMode, LinearCoordinate, Zero
from roughgibbs.gibbs import GibbsSpec, dlr_consistency_check, growth_diagnostic, mixing_diagnostic, sample_mu_T
from roughgibbs.potentials import (
    GaussExp,
    HarmonicRef,
    gap_decay_fit,
    mehler_pi,
    omega_quadrature,
    pair_energies,
    w_energy,
    w_energy_arrays,
    w_energy_batch,
)
from roughgibbs.rough import (
    GridPath,
    Scheme,
    chen_defect_max,
    ito_strat_defect,
    lift,
    linear_integral_closed_form,
    rough_integral,
    subsample,
)

RESULTS = []
WORKERS = min(8, os.cpu_count() or 1)


def record(number, name, ok, detail):
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {name}: {detail}")
    print(RESULTS[-1])
    assert ok, detail


def bm_paths(n, level, dim, seed, interval=(0.0, 1.0)):
    vals = sample_batch(PathLawSpec("bm", interval, level, dim), n, seed)
    return [GridPath(interval, level, v) for v in vals]


def test_01_chen_relation():
    chen_defect_max(lift(bm_paths(1, 4, 2, 0)[0]))  # compile the kernel outside the timed region
    paths = bm_paths(50, 10, 2, 1)
    t0 = time.perf_counter()
    worst = max(chen_defect_max(lift(p), relative=True) for p in paths)
    elapsed = time.perf_counter() - t0
    record(1, "Chen relation", worst <= 1e-12 and elapsed < 10.0,
           f"max relative defect {worst:.2e} (<= 1e-12), runtime {elapsed:.1f} s (< 10 s)")


def test_02_rough_integral_exactness():
    worst = 0.0
    for p in bm_paths(50, 10, 2, 2):
        rp = lift(p)
        c = np.array([0.7, -1.3])
        got = rough_integral(rp, Constant(c))
        worst = max(worst, abs(got - c @ (p.values[-1] - p.values[0])) / max(1.0, abs(got)))
        for i in range(2):
            for j in range(2):
                got = rough_integral(rp, LinearCoordinate(i, j, 2))
                want = linear_integral_closed_form(rp, i, j)
                worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    record(2, "rough-integral exactness", worst <= 1e-12, f"max error {worst:.2e} (<= 1e-12)")


def test_03_ito_stratonovich():
    t0 = time.perf_counter()
    exact = 0.0
    for p in bm_paths(50, 10, 2, 3):
        ito, strat = lift(p), lift(p, Scheme.STRAT_EXACT)
        for i in range(2):
            for j in range(2):
                exact = max(exact, ito_strat_defect(ito, strat, LinearCoordinate(i, j, 2)))
    phi = FourierMode([1.0], 0.5, 0, "cos")
    levels = np.arange(8, 15)
    slopes = []
    for p in bm_paths(100, 14, 1, 4):
        d = []
        for L in levels:
            q = subsample(p, int(L))
            d.append(ito_strat_defect(lift(q), lift(q, Scheme.STRAT_TRAPEZOID), phi))
        slopes.append(np.polyfit(levels, np.log2(d), 1)[0])
    slope = float(np.median(slopes))
    elapsed = time.perf_counter() - t0
    record(3, "Ito-Stratonovich correction", exact <= 1e-12 and slope <= -0.3 and elapsed < 120,
           f"linear-field defect {exact:.2e} (<= 1e-12), trapezoid median slope {slope:.3f} (<= -0.3), "
           f"runtime {elapsed:.1f} s (< 120 s)")


def test_04_young_regime_circle():
    L = 14
    u = np.linspace(0, math.pi, 2 ** L + 1)
    p = GridPath((0.0, math.pi), L, np.stack([np.cos(u), np.sin(u)], axis=1))

    class Rotation(Zero):
        def __init__(self):
            super().__init__(2)

        def value(self, t, x):
            return np.stack([-x[:, 1], x[:, 0]], axis=1)

        def grad(self, t, x):
            g = np.zeros((len(x), 2, 2))
            g[:, 0, 1] = -1.0
            g[:, 1, 0] = 1.0
            return g

    err = max(abs(rough_integral(lift(p, s), Rotation()) - math.pi) for s in Scheme)
    record(4, "Young-regime circle integral", err <= 1e-5, f"max error over lifts {err:.2e} (<= 1e-5)")


def test_05_energy_positivity_and_decomposition():
    W = GaussExp(1.0, 1.0, 0.5)
    X = sample_batch(PathLawSpec("ou", (0.0, 4.0), 7, 1), 200, 5)
    e = w_energy_batch(X, np.linspace(0.0, 4.0, 129), W)
    positive = bool(np.all(e >= 0.0))
    worst = 0.0
    g = np.random.default_rng(6)
    for N in (2, 4, 6):
        start, segs = None, []
        for k in range(N):
            v = sample_batch(PathLawSpec("ou", (k, k + 1.0), 6, 1, start=start), 1, g)[0]
            segs.append(GridPath((k, k + 1.0), 6, v))
            start = tuple(v[-1])
        x = np.concatenate([segs[0].values] + [s.values[1:] for s in segs[1:]])
        t = np.concatenate([segs[0].times] + [s.times[1:] for s in segs[1:]])
        total = w_energy_arrays(x, t, W)
        worst = max(worst, abs(sum(pair_energies(segs, W).values()) - total))
    record(5, "energy positivity and decomposition", positive and worst <= 1e-10,
           f"min W_T {e.min():.3e} over 200 paths (>= 0), pair-sum error {worst:.2e} (<= 1e-10)")


def test_06_pairing_cross_check():
    W = GaussExp(1.0, 1.0, 0.5)
    vals = sample_batch(PathLawSpec("ou", (0.0, 4.0), 7, 1), 20, 7)
    worst, ok = 0.0, True
    for v in vals:
        rp = lift(GridPath((0.0, 4.0), 7, v))
        res = pair_w(GridCurrent(rp), GridCurrent(rp), W, full=True)
        direct = w_energy(rp, W)
        err = abs(0.5 * res.value - direct)
        ok &= err <= max(0.02 * direct, res.tail_estimate)
        worst = max(worst, err / direct)
    record(6, "pairing cross-check", ok, f"max relative gap {worst:.2%} (<= max(2%, tail))")


def test_07_mehler_spectral_gap():
    t0 = time.perf_counter()
    ext = HarmonicRef(1)
    z, w = omega_quadrature(80)
    norm_err = 0.0
    for b in (2.0, 4.0, 6.0):
        for x in np.linspace(-3, 3, 13):
            norm_err = max(norm_err, abs(float(np.sum(w * mehler_pi(ext, b, x, z[:, 0]))) - 1.0))
    rate, _ = gap_decay_fit(ext, (2.0, 4.0, 6.0), box=1.0)
    elapsed = time.perf_counter() - t0
    record(7, "Mehler normalisation and gap", norm_err <= 1e-8 and 0.9 <= rate <= 1.1 and elapsed < 30,
           f"normalisation error {norm_err:.2e} (<= 1e-8), decay rate {rate:.4f} (in [0.9, 1.1]), "
           f"runtime {elapsed:.2f} s (< 30 s)")


def test_08_loose_end_vanishing():
    part = Partition1D.from_b(4, 1.0)
    loose = Cluster((Contour(frozenset({(0, 1)})),), (Chain(2, 1),))
    est = estimate_activity(loose, part, 0.05, GaussExp(1.0, 1.0, 0.5), 10_000, 8)
    record(8, "loose-end vanishing", abs(est.K) <= 2 * est.se,
           f"K = {est.K:.3e}, SE = {est.se:.3e} (|K| <= 2 SE)")


def test_09_cluster_representation():
    t0 = time.perf_counter()
    part = Partition1D.from_b(4, 1.0)
    W = GaussExp(1.0, 1.0, 0.5)
    clusters = enumerate_clusters(part, max_weight=4)
    tab = estimate_activities(part, clusters, 0.05, W, 100_000, 9, workers=WORKERS)
    z = z_cluster_sum(clusters, tab, max_terms=0)
    zd, zd_se = tab.extras["z_direct"], tab.extras["z_direct_se"]
    pooled = math.hypot(z.se, zd_se)
    elapsed = time.perf_counter() - t0
    record(9, "cluster representation identity", abs(z.value - zd) <= 3 * pooled and elapsed < 600,
           f"{len(clusters)} clusters, Z_cluster {z.value:.5f} vs Z_direct {zd:.5f}, "
           f"|diff| {abs(z.value - zd):.2e} (<= 3 x {pooled:.2e}), runtime {elapsed:.1f} s "
           f"on {WORKERS} worker(s) (< 600 s)")


def test_10_algebraic_regrouping():
    g = np.random.default_rng(10)
    worst = 0.0
    for _ in range(10_000):
        N = int(g.integers(2, 5))
        f = {(i, j): float(g.uniform(-1, 1)) for i in range(N) for j in range(i + 1, N)}
        prod, direct, comps = regrouping_identity(N, f, g.uniform(-1, 1, N))
        worst = max(worst, abs(prod - direct), abs(prod - comps))
    record(10, "algebraic regrouping", worst <= 1e-12, f"max error {worst:.2e} over 10^4 draws (<= 1e-12)")


def test_11_polymer_log_identity():
    g = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        masks, K = random_polymer_instance(g, n_max=5, k_max=0.1)
        zs = z_cluster_sum(masks, K, max_terms=0).value
        worst = max(worst, abs(math.exp(log_z_series(masks, K, 6)) - zs))
    fixtures = (ursell([[1]]), ursell([[1, 0], [0, 1]]), ursell(np.ones((3, 3))))
    record(11, "polymer log identity", worst <= 1e-4 and fixtures == (1.0, 0.0, 2.0),
           f"max |exp(log series) - Z| {worst:.2e} (<= 1e-4), ursell fixtures {fixtures} (= (1, 0, 2))")


def test_12_tree_graph_bound():
    g = np.random.default_rng(12)
    violations = 0
    for k in range(300):
        r = 3 + k % 3
        w = np.triu(g.uniform(0, 1, (r, r)), 1)
        violations += not tree_graph_bound_check(r, w + w.T).holds
    record(12, "tree-graph bound", violations == 0, f"{violations} violations in 300 instances, r in {{3,4,5}}")


def test_13_gibbs_free_case():
    def F(v, t):
        return v[:, 0, 0] * v[:, -1, 0] + v[:, len(t) // 2, 0] ** 2

    free = sample_mu_T(GibbsSpec(T=1.0, level=6, lam=0.0), 2000, 13)
    mean, _ = free.expect(F)
    ref = float(np.mean(F(free.values, free.times)))
    coupled = sample_mu_T(GibbsSpec(T=1.0, level=6, lam=0.05), 2000, 13)
    ok = free.z_hat == 1.0 and abs(mean - ref) <= 1e-12 and coupled.z_hat <= 1.0
    record(13, "Gibbs free-case reduction", ok,
           f"Z(0) = {free.z_hat!r}, |E_mu F - E_nu F| = {abs(mean - ref):.1e} (<= 1e-12), "
           f"Z(0.05) = {coupled.z_hat:.5f} (<= 1)")


def test_14_dlr_consistency():
    parts, ok = [], True
    for lam in (0.0, 0.05):
        rep = dlr_consistency_check(GibbsSpec(T=2.0, level=5, lam=lam), lambda v, t: v[:, len(t) // 2, 0] ** 2,
                                    10_000, 14)
        ok &= rep.passed
        parts.append(f"lambda={lam}: |diff| {abs(rep.difference):.2e} vs 3 SE {3 * rep.pooled_se:.2e}")
    record(14, "DLR consistency", ok, "; ".join(parts))


def test_15_mixing_trend():
    def F(v, t):
        return v[:, 0, 0]

    free = mixing_diagnostic(GibbsSpec(T=2.0, level=6, lam=0.0), F, F, [0.25, 0.5, 1.0, 1.5, 2.0], 100_000, 15)
    coupled = mixing_diagnostic(GibbsSpec(T=4.0, level=6, lam=0.05), F, F, [1.0, 2.0, 4.0, 8.0], 20_000, 16,
                                n_batches=5, workers=WORKERS)
    slope = free["exp_slope"]
    ok = abs(slope + 1.0) <= 0.2 and coupled["nonincreasing"]
    med = ", ".join(f"{c:.2e}" for c in coupled["median_abs_cov"])
    record(15, "mixing trend", ok,
           f"lambda=0 log-cov slope {slope:.3f} (-1 +/- 0.2), lambda=0.05 median |cov| [{med}] nonincreasing")


def test_16_growth_diagnostic():
    out = growth_diagnostic(100_000, 17)
    tail = out["tail"]
    record(16, "growth diagnostic", tail["slope"] < 0 and tail["r2"] >= 0.9,
           f"tail slope vs a^3 {tail['slope']:.4f} (< 0), R^2 {tail['r2']:.4f} (>= 0.9)")
