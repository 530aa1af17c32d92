import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghlab.complex_core import (
    AnalyticDisc,
    BallAutomorphism,
    MobiusParam,
    OutsideBallError,
    PathPolyline,
    PoleError,
    as_cvector,
    ball_aut_apply,
    ball_aut_jacobian,
    ball_complex_geodesic,
    ball_kob_distance,
    ball_kr_metric,
    ball_real_geodesic,
    basis_vector,
    cnorm,
    herm_inner,
    mobius_apply,
    mobius_iterate,
)


def ball_points(rng, k, n=2, rmax=0.999):
    u = rng.normal(size=(k, n)) + 1j * rng.normal(size=(k, n))
    u /= cnorm(u)[:, None]
    return u * (rmax * rng.uniform(size=k) ** (1 / (2 * n)))[:, None]


def euclid(path):
    return float(cnorm(np.diff(path.vertices, axis=0)).sum())


# ---------------------------------------------------------- inner products

def test_herm_inner_examples():
    e1, e2 = basis_vector(0), basis_vector(1)
    assert herm_inner(e1, e1) == 1
    assert herm_inner(e1, e2) == 0
    assert herm_inner(np.array([1 + 1j, 0]), e1) == 1 + 1j


def test_herm_inner_dimension_mismatch():
    with pytest.raises(ValueError):
        herm_inner(np.ones(2), np.ones(3))


# ---------------------------------------------------------------- Moebius

def test_mobius_examples():
    assert mobius_apply(0.5, 0) == 0.5
    assert mobius_apply(0.3, -0.3) == 0
    assert mobius_apply(MobiusParam(0.5), 0.5, "inverse") == 0


def test_mobius_parameter_range():
    for t in (1.0, -1.0, 2.0, float("nan")):
        with pytest.raises(ValueError):
            MobiusParam(t)


def test_mobius_pole_guard():
    with pytest.raises(PoleError):
        mobius_apply(0.5, -2.0)
    with pytest.raises(PoleError):
        mobius_apply(0.5, 2.0, "inverse")


def test_mobius_round_trip_on_samples():
    rng = np.random.default_rng(0)
    lam = rng.uniform(-1, 1, 10_000) + 1j * rng.uniform(-1, 1, 10_000)
    for t in (-0.9, 0.3, 0.99):
        back = mobius_apply(t, mobius_apply(t, lam), "inverse")
        assert np.max(np.abs(back - lam)) < 1e-12


def test_mobius_iterate_composes():
    x = 0.2 + 0.1j
    assert mobius_iterate(x, 3, 0.5, "forward") == pytest.approx(
        mobius_apply(0.5, mobius_apply(0.5, mobius_apply(0.5, x))), abs=1e-15)
    assert mobius_iterate(mobius_iterate(x, 4, 0.5, "forward"), 4, 0.5, "inverse") == pytest.approx(x, abs=1e-12)


# ----------------------------------------------------- ball automorphisms

def test_ball_aut_examples():
    t = 0.7
    e1 = basis_vector(0)
    np.testing.assert_allclose(ball_aut_apply(t, e1), e1, atol=1e-15)
    np.testing.assert_allclose(ball_aut_apply(BallAutomorphism(t), np.zeros(2)), [t, 0], atol=1e-15)


def test_ball_aut_preserves_ball_on_samples():
    Z = ball_points(np.random.default_rng(1), 10_000, rmax=0.99999)
    W = ball_aut_apply(0.9, Z)
    assert np.all(cnorm(W) < 1)
    assert np.max(cnorm(ball_aut_apply(0.9, W, "inverse") - Z)) < 1e-12


def test_ball_aut_rejects_bad_parameter_and_pole():
    with pytest.raises(ValueError):
        BallAutomorphism(1.0)
    with pytest.raises(PoleError):
        ball_aut_apply(0.5, np.array([-2.0, 0]))


def test_ball_aut_jacobian_against_finite_differences():
    rng = np.random.default_rng(2)
    z = ball_points(rng, 1)[0]
    J = ball_aut_jacobian(0.6, z)
    h = 1e-6
    for j in range(2):
        e = basis_vector(j) * h
        fd = (ball_aut_apply(0.6, z + e) - ball_aut_apply(0.6, z - e)) / (2 * h)
        np.testing.assert_allclose(J[:, j], fd, atol=1e-8)


# ----------------------------------------------------------- ball metric

def test_metric_schwarz_at_center():
    X = np.array([0.3 - 2j, 0.5])
    assert ball_kr_metric(np.zeros(2), X) == pytest.approx(cnorm(X), rel=1e-15)


def test_metric_radial_direction():
    assert ball_kr_metric(np.array([0.5, 0]), basis_vector(0)) == pytest.approx(4 / 3, rel=1e-14)


def test_metric_tangential_direction_against_disc_estimator():
    from ghlab.domains import unit_ball
    from ghlab.kobayashi import estimate_kr_metric

    z, X = np.array([0.5, 0]), basis_vector(1)
    br = estimate_kr_metric(unit_ball(), z, X)
    assert ball_kr_metric(z, X) == pytest.approx(1 / math.sqrt(0.75))
    assert br.upper == pytest.approx(ball_kr_metric(z, X), rel=1e-3)


def test_metric_outside_ball_raises():
    with pytest.raises(OutsideBallError):
        ball_kr_metric(np.array([1.0, 0]), basis_vector(0))


@settings(max_examples=60, deadline=None)
@given(
    t=st.floats(0.01, 0.99),
    seed=st.integers(0, 2**32 - 1),
)
def test_metric_invariant_under_ball_automorphisms(t, seed):
    rng = np.random.default_rng(seed)
    z = ball_points(rng, 1, rmax=0.99)[0]
    X = rng.normal(size=2) + 1j * rng.normal(size=2)
    Y = ball_aut_jacobian(t, z) @ X
    assert ball_kr_metric(ball_aut_apply(t, z), Y) == pytest.approx(ball_kr_metric(z, X), rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(c=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False), seed=st.integers(0, 2**32 - 1))
def test_metric_homogeneous(c, seed):
    rng = np.random.default_rng(seed)
    z = ball_points(rng, 1)[0]
    X = rng.normal(size=2) + 1j * rng.normal(size=2)
    assert ball_kr_metric(z, c * X) == pytest.approx(abs(c) * ball_kr_metric(z, X), rel=1e-12, abs=1e-300)


# --------------------------------------------------------- ball distance

def test_distance_examples():
    assert ball_kob_distance(np.zeros(2), np.zeros(2)) == 0
    r = 0.8
    assert ball_kob_distance(np.zeros(2), np.array([r, 0])) == pytest.approx(math.atanh(r), rel=1e-14)


def test_radial_distance_is_integral_of_metric():
    from scipy.integrate import quad

    r = 0.95
    val, _ = quad(lambda s: ball_kr_metric(np.array([s, 0]), basis_vector(0)), 0, r, epsabs=1e-13)
    assert ball_kob_distance(np.zeros(2), np.array([r, 0])) == pytest.approx(val, rel=1e-10)


def test_distance_invariant_under_automorphisms():
    rng = np.random.default_rng(4)
    Z, W = ball_points(rng, 200), ball_points(rng, 200)
    for t in (0.5, 0.9, 0.999):
        d0 = ball_kob_distance(Z, W)
        d1 = ball_kob_distance(ball_aut_apply(t, Z), ball_aut_apply(t, W))
        assert np.max(np.abs(d1 - d0)) < 1e-10 * max(1.0, d0.max())


def test_distance_triangle_inequality():
    rng = np.random.default_rng(5)
    A, B, C = (ball_points(rng, 500) for _ in range(3))
    slack = ball_kob_distance(A, B) + ball_kob_distance(B, C) - ball_kob_distance(A, C)
    assert slack.min() >= -1e-10


def test_distance_outside_ball_raises():
    with pytest.raises(OutsideBallError):
        ball_kob_distance(np.zeros(2), np.array([0.6, 0.8]))


# ------------------------------------------------------------- geodesics

def test_radial_real_geodesic_is_straight():
    r = 0.7
    g = ball_real_geodesic(np.zeros(2), np.array([r, 0]), m=33)
    assert np.max(np.abs(g.vertices[:, 1])) < 1e-15
    assert euclid(g) == pytest.approx(r, rel=1e-12)
    assert g.marks[-1] == pytest.approx(math.atanh(r))


def test_real_geodesic_euclidean_length_bound():
    rng = np.random.default_rng(6)
    Z, W = ball_points(rng, 1000, rmax=0.9999), ball_points(rng, 1000, rmax=0.9999)
    worst = max(euclid(ball_real_geodesic(z, w)) / cnorm(w - z) for z, w in zip(Z, W))
    assert 1 <= worst <= math.pi / 2


def test_real_geodesic_commutes_with_automorphism():
    rng = np.random.default_rng(7)
    z, w = ball_points(rng, 2)
    t = 0.8
    g = ball_real_geodesic(z, w)
    img = ball_aut_apply(t, g.vertices)
    h = ball_real_geodesic(ball_aut_apply(t, z), ball_aut_apply(t, w))
    np.testing.assert_allclose(img, h.vertices, atol=1e-10)
    assert h.marks[-1] == pytest.approx(g.marks[-1], rel=1e-10)


def test_real_geodesic_rejects_coincident_points():
    with pytest.raises(ValueError):
        ball_real_geodesic(np.zeros(2), np.zeros(2))


def test_complex_geodesic_axis_slice():
    disc = ball_complex_geodesic(np.zeros(2), np.array([0.4, 0]))
    lam = np.array([0.3, -0.2j])
    np.testing.assert_allclose(disc(lam), np.stack([lam, 0 * lam], axis=-1), atol=1e-15)


def test_complex_geodesic_contains_both_points():
    rng = np.random.default_rng(8)
    z, w = ball_points(rng, 2)
    disc = ball_complex_geodesic(z, w)
    for x in (z, w):
        lam, resid = disc.preimage(x)
        assert abs(lam) < 1 and resid < 1e-12


def test_complex_geodesic_boundary_on_sphere():
    rng = np.random.default_rng(9)
    z, w = ball_points(rng, 2)
    vals = ball_complex_geodesic(z, w).boundary_values(64)
    np.testing.assert_allclose(cnorm(vals), 1.0, atol=1e-13)


# ------------------------------------------------------------ containers

def test_polyline_validation_and_concat():
    a = PathPolyline(np.array([[0, 0], [0.1, 0]]))
    b = PathPolyline(np.array([[0.1, 0], [0.2, 0.1j]]))
    ab = a.concat(b)
    assert len(ab) == 3 and np.all(np.diff(ab.marks) >= 0)
    with pytest.raises(ValueError):
        a.concat(a)
    with pytest.raises(ValueError):
        PathPolyline(np.zeros((3, 2)), marks=[0, 1, 0.5])


def test_analytic_disc_with_pole_is_moebius():
    # l -> (l + b)/(1 + b l) e1 realised by coefficients (b, 1) and pole b
    b = 0.4
    disc = AnalyticDisc(np.array([[b, 0], [1, 0]]), pole=b)
    lam = np.exp(1j * np.linspace(0, 2 * np.pi, 9))
    np.testing.assert_allclose(np.abs(disc(lam)[:, 0]), 1.0, atol=1e-14)
    np.testing.assert_allclose(disc.derivative_at_zero(), [1 - b * b, 0])
    with pytest.raises(ValueError):
        AnalyticDisc(np.zeros((2, 2)), pole=1.0)


def test_as_cvector_checks_dimension():
    with pytest.raises(ValueError):
        as_cvector(np.zeros(3), n=2)
