import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bm_path, ou_path
from roughgibbs.brownian import PathLawSpec, sample_batch
from roughgibbs.potentials import (
    ConfiningPower,
    EnergyConfig,
    GaussExp,
    HarmonicRef,
    allocate_pairs,
    energy_blocks,
    gap_decay_fit,
    mehler_pi,
    mehler_series,
    omega_quadrature,
    pair_energies,
    potential_from_json,
    potential_to_json,
    v_energy,
    w_energy,
    w_energy_arrays,
    w_energy_batch,
    w_pair_energy,
)
from roughgibbs.rough import GridPath, Scheme, lift

EXT = HarmonicRef(1)


# --- Mehler kernel -----------------------------------------------------------


@given(st.floats(1.0, 6.0), st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=40, deadline=None)
def test_mehler_matches_hermite_series(t, x, y):
    assert abs(mehler_pi(EXT, t, x, y) - mehler_series(t, x, y, kmax=60)) < 1e-8


@pytest.mark.parametrize("t", [0.3, 1.0, 2.0, 4.0])
def test_mehler_normalised_and_symmetric(t):
    z, w = omega_quadrature(80)
    for x in (-1.5, 0.0, 0.7):
        assert abs(np.sum(w * mehler_pi(EXT, t, x, z[:, 0])) - 1.0) < 1e-8
    assert mehler_pi(EXT, t, 0.3, -1.1) == pytest.approx(mehler_pi(EXT, t, -1.1, 0.3), rel=1e-14)


def test_mehler_chapman_kolmogorov():
    z, w = omega_quadrature(80)
    x, y = 0.4, -0.9
    lhs = np.sum(w * mehler_pi(EXT, 0.7, x, z[:, 0]) * mehler_pi(EXT, 1.1, z[:, 0], y))
    assert abs(lhs - mehler_pi(EXT, 1.8, x, y)) < 1e-6


def test_mehler_two_dimensional_product():
    ext2 = HarmonicRef(2)
    x, y = np.array([0.3, -0.2]), np.array([1.0, 0.5])
    prod = mehler_pi(EXT, 1.3, x[0], y[0]) * mehler_pi(EXT, 1.3, x[1], y[1])
    assert mehler_pi(ext2, 1.3, x, y) == pytest.approx(prod, rel=1e-13)


def test_mehler_long_time_limit():
    u = np.linspace(-2, 2, 9)
    assert np.max(np.abs(mehler_pi(EXT, 20.0, u[:, None], u[None, :]) - 1.0)) <= 1e-8
    with pytest.raises(ValueError):
        mehler_pi(EXT, 0.0, 0.0, 0.0)


def test_gap_decay_rate():
    rate, sups = gap_decay_fit(EXT, (2.0, 4.0, 6.0), box=1.0)
    assert 0.9 <= rate <= 1.1
    assert np.all(np.diff(sups) < 0)


@pytest.mark.xfail(reason="on a wide box the quadratic prefactor inflates the fitted rate", strict=True)
def test_gap_decay_rate_wide_box():
    rate, _ = gap_decay_fit(EXT, (2.0, 4.0, 6.0), box=3.0)
    assert 0.9 <= rate <= 1.1


def test_ground_state_normalised():
    u = np.linspace(-10, 10, 20001)
    assert abs(np.trapezoid(EXT.psi(u[:, None]) ** 2, u) - 1.0) < 1e-10


def test_omega_sample_variance():
    x = EXT.omega_sample(np.random.default_rng(0), 200_000)
    assert x.shape == (200_000, 1)
    assert abs(x.var() - 0.5) < 0.01


# --- external potential energies --------------------------------------------


def test_v_energy_constant_path():
    p = GridPath((0.0, 2.0), 4, np.zeros((17, 3)))
    assert v_energy(p, HarmonicRef(3)) == pytest.approx(-3.0, abs=1e-14)  # -d/2 * |I|


def test_v_energy_linear_path():
    t = np.linspace(0, 1, 2 ** 12 + 1)
    p = GridPath((0.0, 1.0), 12, t[:, None])
    # int_0^1 (t^2/2 - 1/2) dt = -1/3
    assert v_energy(p, EXT) == pytest.approx(-1.0 / 3.0, abs=1e-7)
    assert v_energy(p, EXT, (0.25, 0.25)) == 0.0


def test_confining_power():
    V = ConfiningPower(s=4.0, C1=2.0, C3=-1.0)
    assert V.V(np.array([1.0])) == pytest.approx(1.0)
    lo, hi = V.growth_bounds(np.array([[2.0]]))
    assert lo[0] == hi[0] == pytest.approx(31.0)
    with pytest.raises(ValueError):
        ConfiningPower(s=-1.0)


# --- pair potential ------------------------------------------------------------


def test_gauss_exp_derivatives():
    W = GaussExp(1.3, 0.7, 2.0, dim=2)
    x, t, h = np.array([0.3, -0.4]), 0.5, 1e-5
    for i in range(2):
        e = np.eye(2)[i] * h
        fd = (W.value(x + e, t) - W.value(x - e, t)) / (2 * h)
        assert W.grad(x, t)[i] == pytest.approx(fd, rel=1e-7)
        fd2 = (W.grad(x + e, t) - W.grad(x - e, t)) / (2 * h)
        np.testing.assert_allclose(W.hess(x, t)[i], fd2, rtol=1e-6)
        fd3 = (W.hess(x + e, t) - W.hess(x - e, t)) / (2 * h)
        np.testing.assert_allclose(W.third(x, t)[i], fd3, rtol=1e-5, atol=1e-10)


def test_gauss_exp_fourier():
    W = GaussExp(1.0, 0.8, 1.5)
    # numerical transform at one (k, w)
    x = np.linspace(-12, 12, 4001)
    t = np.linspace(-40, 40, 16001)
    k, w = 0.7, 0.3
    fx = np.trapezoid(np.exp(-0.5 * x ** 2 / 0.64) * np.cos(k * x), x)
    ft = np.trapezoid(np.exp(-np.abs(t) / 1.5) * np.cos(w * t), t)
    assert W.fourier(k, w) == pytest.approx(fx * ft, rel=1e-5)


def test_potential_json_roundtrip():
    for p in (HarmonicRef(2), ConfiningPower(3.0, 1.5, 0.2), GaussExp(0.5, 2.0, 3.0, 2)):
        assert potential_from_json(potential_to_json(p)) == p
    with pytest.raises(ValueError):
        potential_from_json('{"family": "lennard_jones"}')


def test_energy_config_gate():
    EnergyConfig(0.5)
    with pytest.raises(ValueError):
        EnergyConfig(1.5)
    EnergyConfig(1.5, lambda_star=2.0)


# --- pair energies -----------------------------------------------------------------


def test_w_energy_nonnegative_on_sampled_paths():
    W = GaussExp(1.0, 1.0, 1.0)
    spec = PathLawSpec("ou", (0.0, 4.0), 7, 1)
    X = sample_batch(spec, 200, 21)
    e = w_energy_batch(X, np.linspace(0, 4, 129), W)
    assert np.all(e >= 0)


def test_w_energy_batch_matches_single():
    W = GaussExp(0.8, 1.2, 0.5, dim=2)
    X = sample_batch(PathLawSpec("bm", (0.0, 1.0), 6, 2), 5, 2)
    t = np.linspace(0, 1, 65)
    batch = w_energy_batch(X, t, W)
    single = [w_energy(GridPath((0.0, 1.0), 6, x), W) for x in X]
    np.testing.assert_allclose(batch, single, rtol=1e-12)


def test_w_energy_rejects_stratonovich_lift():
    p = bm_path(0, 5, 1)
    with pytest.raises(ValueError):
        w_energy(lift(p, Scheme.STRAT_EXACT), GaussExp())


def _segments(N, level, seed, dim=1):
    """Consecutive unit-length OU segments joined continuously."""
    g = np.random.default_rng(seed)
    start, segs = None, []
    for k in range(N):
        v = sample_batch(PathLawSpec("ou", (k, k + 1.0), level, dim, start=start), 1, g)[0]
        segs.append(GridPath((k, k + 1.0), level, v))
        start = tuple(v[-1])
    return segs


def _concat(segs):
    x = np.concatenate([segs[0].values] + [s.values[1:] for s in segs[1:]])
    t = np.concatenate([segs[0].times] + [s.times[1:] for s in segs[1:]])
    return x, t


@pytest.mark.parametrize("N", [2, 4, 6])
def test_pair_energies_sum_to_total(N):
    W = GaussExp(1.0, 1.0, 1.0)
    segs = _segments(N, 6, N)
    pe = pair_energies(segs, W)
    total = w_energy_arrays(*_concat(segs), W)
    assert len(pe) == N * (N - 1) // 2
    assert abs(sum(pe.values()) - total) <= 1e-10 * max(1.0, abs(total))


def test_pair_energies_single_path_split():
    W = GaussExp(1.0, 1.0, 1.0)
    p = ou_path(3, level=8, interval=(0.0, 4.0))
    pe = pair_energies(lift(p, Scheme.ITO), W, 4)
    assert sum(pe.values()) == pytest.approx(w_energy(p, W), abs=1e-10)
    assert w_pair_energy(p, W, 1, 3, N=4) == pe[(1, 3)]
    with pytest.raises(ValueError):
        pair_energies(p, W, 3)
    with pytest.raises(ValueError):
        w_pair_energy(p, W, 2, 7, N=4)


def test_allocation_rule():
    J = np.arange(16.0).reshape(4, 4)
    P = allocate_pairs(J)
    assert P[0, 2] == pytest.approx(0.5 * (J[0, 2] + J[2, 0]))
    # end interval 0 gives all of J00/2 to (0, 1), interior 1 gives J11/4 to each side
    assert P[0, 1] == pytest.approx(0.5 * (J[0, 1] + J[1, 0]) + J[0, 0] / 2 + J[1, 1] / 4)
    assert P[1, 2] == pytest.approx(0.5 * (J[1, 2] + J[2, 1]) + J[1, 1] / 4 + J[2, 2] / 4)
    assert P[2, 3] == pytest.approx(0.5 * (J[2, 3] + J[3, 2]) + J[2, 2] / 4 + J[3, 3] / 2)
    assert np.triu(P, 1).sum() == pytest.approx(J.sum() / 2)
    assert np.all(np.tril(P) == 0)


def test_pair_energy_locality():
    # changing the path on tau_3 leaves the pair (0, 1) untouched
    W = GaussExp(1.0, 1.0, 1.0)
    segs = _segments(4, 5, 1)
    v = segs[3].values.copy()
    v[1:] += 0.7
    modified = segs[:3] + [GridPath(segs[3].interval, 5, v)]
    a, b = pair_energies(segs, W), pair_energies(modified, W)
    assert a[(0, 1)] == b[(0, 1)]
    assert a[(2, 3)] != b[(2, 3)]


def test_far_pair_bound():
    W = GaussExp(1.0, 1.0, 0.5)
    segs = _segments(5, 6, 9, dim=2)
    J = energy_blocks(segs, W)
    pe = pair_energies(segs, W)
    var = [np.abs(np.diff(s.values, axis=0)).sum(axis=1) for s in segs]
    for (i, j), e in pe.items():
        if j - i >= 2:
            bound = W.time_decay_bound(j - i - 1) * var[i].sum() * var[j].sum()
            assert abs(e) <= bound
            assert e == pytest.approx(J[i, j], rel=1e-12)


def test_segments_must_join():
    segs = _segments(2, 4, 0)
    bad = [segs[0], GridPath(segs[1].interval, 4, segs[1].values + 1.0)]
    with pytest.raises(ValueError):
        pair_energies(bad, GaussExp())
