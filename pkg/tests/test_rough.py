import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bm_path
from roughgibbs.fields import Constant, FourierMode, GaussianEnvelope, LinearCoordinate, Zero
from roughgibbs.rough import (GridPath, Scheme, area_matrix, area_query, chen_defect_max,
                              dyadic_convergence_profile, grr_bound, holder_norm, ito_strat_defect, lift,
                              linear_integral_closed_form, linear_path, rough_integral, subsample)
from roughgibbs.rough import _chen_scan, _chen_scan_py


def direct_area(x, a, b):
    """O(n) double sum sum_{a<=j<b} (X_j - X_a) (x) dX_j."""
    out = np.zeros((x.shape[1], x.shape[1]))
    for j in range(a, b):
        out += np.outer(x[j] - x[a], x[j + 1] - x[j])
    return out


# --- oracles ---------------------------------------------------------------


def test_linear_path_ito_area_closed_form():
    for L in (3, 6, 10):
        rp = lift(linear_path((0.0, 1.0), L))
        delta = 2.0 ** -L
        assert area_query(rp, 0, rp.n)[0, 0] == pytest.approx((1 - delta) / 2, abs=1e-14)


def test_constant_path_has_zero_area_for_every_scheme():
    p = GridPath((0.0, 1.0), 4, np.full((17, 2), 3.5))
    for scheme in Scheme:
        rp = lift(p, scheme)
        A = area_matrix(rp)
        if scheme is Scheme.STRAT_EXACT:
            continue  # adds the deterministic bracket (t - s)/2 on the diagonal
        assert np.all(A == 0)


def test_strat_exact_adds_half_bracket():
    p = bm_path(1, level=6)
    ito, se = lift(p), lift(p, Scheme.STRAT_EXACT)
    d = area_query(se, 5, 40) - area_query(ito, 5, 40)
    np.testing.assert_allclose(d, 0.5 * 35 * p.dt * np.eye(2), atol=1e-15)


def test_area_query_matches_direct_double_sum(rng):
    x = np.cumsum(rng.normal(size=(65, 3)), axis=0)
    rp = lift(GridPath((0.0, 2.0), 6, x))
    for a, b in [(0, 64), (3, 17), (10, 11), (20, 63)]:
        np.testing.assert_allclose(area_query(rp, a, b), direct_area(x, a, b), rtol=1e-12, atol=1e-12)
    assert np.all(area_query(rp, 7, 7) == 0)
    with pytest.raises(IndexError):
        area_query(rp, 5, 4)
    with pytest.raises(IndexError):
        area_query(rp, 0, 65)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=17, max_size=17))
def test_trapezoid_area_is_half_square_in_one_dimension(values):
    x = np.asarray(values)[:, None]
    rp = lift(GridPath((0.0, 1.0), 4, x), Scheme.STRAT_TRAPEZOID)
    A = area_matrix(rp)[..., 0, 0]
    for a in range(17):
        for b in range(a, 17):
            assert A[a, b] == pytest.approx(0.5 * (x[b, 0] - x[a, 0]) ** 2, abs=1e-12 * (1 + x[b, 0] ** 2 + x[a, 0] ** 2))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 3), st.sampled_from(list(Scheme)))
def test_chen_relation_every_triple(seed, dim, scheme):
    rp = lift(bm_path(seed, level=5, dim=dim), scheme)
    assert chen_defect_max(rp) <= 1e-12


def test_chen_kernel_agrees_with_reference_on_planted_defects():
    for dim in (1, 2, 3):
        p = bm_path(dim, level=5, dim=dim)
        A = area_matrix(lift(p)).copy()
        A[2, 19, 0, dim - 1] += 2e-6
        for rel in (True, False):
            assert _chen_scan(A, p.values, rel) == pytest.approx(_chen_scan_py(A, p.values, rel), rel=1e-9)
            assert _chen_scan(A, p.values, rel) > 1e-7


# --- rough integral ----------------------------------------------------------


def test_constant_field_telescopes():
    p = bm_path(2, level=8)
    rp = lift(p)
    c = np.array([1.5, -0.25])
    for a, b in [(0, 256), (13, 200)]:
        assert rough_integral(rp, Constant(c), a, b) == pytest.approx(c @ (p.values[b] - p.values[a]), abs=1e-12)


def test_linear_coordinate_identity():
    rp = lift(bm_path(3, level=9, dim=2))
    for i in range(2):
        for j in range(2):
            for a, b in [(0, 512), (100, 301)]:
                got = rough_integral(rp, LinearCoordinate(i, j, 2), a, b)
                assert got == pytest.approx(linear_integral_closed_form(rp, i, j, a, b), abs=1e-12)


def test_rough_integral_additive_and_local():
    rp = lift(bm_path(4, level=8))
    phi = GaussianEnvelope([0.0, 0.0], 0.7, 1.3, time_center=0.4, time_width=0.2)
    whole = rough_integral(rp, phi, 10, 200)
    parts = rough_integral(rp, phi, 10, 77) + rough_integral(rp, phi, 77, 200)
    assert whole == pytest.approx(parts, abs=1e-12)
    assert rough_integral(rp, phi, 50, 50) == 0.0
    assert rough_integral(rp, Zero(2), 0, 256) == 0.0


def test_circle_line_integral():
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

    assert abs(rough_integral(lift(p, Scheme.STRAT_TRAPEZOID), Rotation()) - math.pi) <= 1e-5
    assert abs(rough_integral(lift(p), Rotation()) - math.pi) <= 1e-5


def test_dyadic_profile_exact_fields_are_flat():
    rp = lift(bm_path(5, level=10))
    assert max(dyadic_convergence_profile(rp, Constant([1.0, 2.0]), range(4, 11))) <= 1e-12
    assert max(dyadic_convergence_profile(rp, LinearCoordinate(0, 1, 2), range(4, 11))) <= 1e-12
    with pytest.raises(ValueError):
        dyadic_convergence_profile(rp, Constant([1.0, 2.0]), [5])


def test_dyadic_profile_decays_for_smooth_field():
    phi = GaussianEnvelope([0.0], 1.0, 1.0, time_center=0.5)
    slopes = []
    for seed in range(20):
        rp = lift(bm_path(seed, level=14, dim=1))
        prof = np.asarray(dyadic_convergence_profile(rp, phi, range(6, 15)))
        slopes.append(np.polyfit(np.arange(7, 15), np.log2(prof), 1)[0])
    assert np.median(slopes) <= -(3 * 0.4 - 1)


# --- norms -----------------------------------------------------------------------


def test_holder_norms():
    p = linear_path((0.0, 1.0), 6)
    assert holder_norm(p, 1.0, mode="exact").value == pytest.approx(1.0)
    c = GridPath((0.0, 1.0), 4, np.ones((17, 1)))
    assert holder_norm(c, 0.4).value == 0.0
    b = bm_path(6, level=9)
    ex = holder_norm(b, 0.4, mode="exact").value
    dy = holder_norm(b, 0.4, mode="dyadic").value
    assert ex >= dy > 0
    rp = lift(b)
    assert holder_norm(rp, 0.8, mode="exact", which="area").value >= holder_norm(rp, 0.8, which="area").value
    with pytest.raises(ValueError):
        holder_norm(bm_path(0, level=13), 0.4, mode="exact")


def test_holder_norm_refinement_monotone():
    fine = bm_path(7, level=9)
    coarse = subsample(fine, 6)
    assert holder_norm(fine, 0.4, mode="exact").value >= holder_norm(coarse, 0.4, mode="exact").value


def test_grr_bound_zero_iff_zero():
    t = np.linspace(0, 1, 33)
    assert grr_bound(np.zeros((33, 33)), t, 0.8, 8) == 0.0
    R = np.zeros((33, 33))
    R[3, 9] = 1e-3
    assert grr_bound(R, t, 0.8, 8) > 0
    rp = lift(GridPath((0.0, 1.0), 5, np.full((33, 1), 2.0)))
    assert grr_bound(area_matrix(rp)[..., 0, 0], t, 0.8, 8) == 0.0


# --- Ito / Stratonovich ------------------------------------------------------------


def test_ito_strat_exact_identities():
    p = bm_path(8, level=10, dim=1)
    ito, se = lift(p), lift(p, Scheme.STRAT_EXACT)
    assert ito_strat_defect(ito, se, Constant([2.0])) == 0.0
    assert ito_strat_defect(ito, se, LinearCoordinate(0, 0, 1)) <= 1e-12
    q = bm_path(9, level=10, dim=1)
    with pytest.raises(ValueError):
        ito_strat_defect(ito, lift(q, Scheme.STRAT_EXACT), Constant([1.0]))


def test_ito_strat_trapezoid_defect_small():
    phi = FourierMode([1.0], 0.5, 0, "cos")
    d = []
    for seed in range(30):
        p = bm_path(seed, level=14, dim=1)
        d.append(ito_strat_defect(lift(p), lift(p, Scheme.STRAT_TRAPEZOID), phi))
    rms = 1.0  # path RMS of unit-time Brownian motion is O(1)
    assert np.median(d) <= 5 * rms * 2 ** -7


def test_gridpath_validation():
    with pytest.raises(ValueError):
        GridPath((1.0, 0.0), 2, np.zeros((5, 1)))
    with pytest.raises(ValueError):
        GridPath((0.0, 1.0), 2, np.zeros((4, 1)))
    with pytest.raises(ValueError):
        GridPath((0.0, 1.0), 2, np.array([[0.0], [np.nan], [0], [0], [0]]))
