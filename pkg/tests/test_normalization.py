import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghlab.complex_core import basis_vector, cnorm, to_complex, to_real
from ghlab.domains import ellipsoid, eval_rho, get_domain, outward_normal, shifted_ball, unit_ball
from ghlab.normalization import (
    LAMBDA,
    Jet2,
    MapStage,
    NormalizationError,
    PipelineMap,
    align_axis,
    certify_CNk,
    choose_N,
    extract_jet2,
    fm_normalize,
    fm_step1,
    fm_step2,
    fm_step3,
    model_jet,
    numerical_stage_jets,
    takagi_values,
)


def assert_model(jet, d, N, atol=1e-12):
    s = jet.summary()
    assert s["scale"] == pytest.approx(1.0, abs=atol)
    assert s["d"] == pytest.approx(d, abs=atol)
    np.testing.assert_allclose(s["Nj"], N, atol=atol)
    assert max(s["max_abs_a"], s["max_abs_b"], s["max_abs_c"]) <= atol


def random_symmetric(rng, n, size):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    a = a + a.T
    return size * a / takagi_values(a).max()


# -------------------------------------------------------------- step 1

def test_jet_ball_at_e1_is_model():
    assert_model(extract_jet2(unit_ball(), np.array([1.0, 0])), 1, 1)


def test_jet_ellipsoid_at_e1():
    assert_model(extract_jet2(get_domain("ellipsoid_1_4"), np.array([1.0, 0]), R=1.0), 1, 4)


def test_jet_ellipsoid_on_second_axis_permutes_coefficients():
    # at (0, 1/2): rho = 2 Re(2 w1) + |w2|^2 + 4 |w1|^2 in the rotated frame; divided by 2
    jet = extract_jet2(get_domain("ellipsoid_1_4"), np.array([0, 0.5]), R=1.0)
    assert_model(jet, 2.0, 0.5)


def test_jet_perturbed_ball_against_finite_difference_hessian():
    D = get_domain("perturbed_ball")
    p = np.zeros(2)
    jet = extract_jet2(D, p, R=1.0)
    # independent oracle: central-difference real Hessian converted to complex blocks
    h = 1e-4
    E = np.eye(4) * h
    x0 = to_real(p)

    def f(x):
        return float(D.value(to_complex(x)))

    Hr = np.array([[(f(x0 + E[i] + E[j]) - f(x0 + E[i] - E[j]) - f(x0 - E[i] + E[j]) + f(x0 - E[i] - E[j]))
                    / (4 * h * h) for j in range(4)] for i in range(4)])
    xx, yy, xy = Hr[0::2, 0::2], Hr[1::2, 1::2], Hr[0::2, 1::2]
    Q = 0.25 * (xx - yy - 1j * (xy + xy.T))
    H = 0.25 * (xx + yy + 1j * (xy - xy.T))
    # ell = (1, 0) at 0, so the frame is the identity
    assert jet.a[0, 0] == pytest.approx(Q[1, 1], abs=1e-8)
    assert jet.a[0, 0] == pytest.approx(0.6, abs=1e-12)
    assert jet.d == pytest.approx(H[0, 0].real, abs=1e-8)
    assert jet.Nj[0] == pytest.approx(H[1, 1].real, abs=1e-8)
    assert abs(jet.c[0]) == pytest.approx(abs(2 * H[0, 1]), abs=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_step1_ball_any_point(seed):
    B = unit_ball()
    p = B.boundary_samples(10, seed=seed)[seed]
    F, jet = fm_step1(B, p)
    assert_model(jet, 1, 1, atol=1e-12)
    np.testing.assert_allclose(F.inverse(np.zeros(2)), p, atol=1e-12)


def test_step1_rejects_flat_points():
    from ghlab.domains import cylinder_slab

    with pytest.raises(NormalizationError):
        fm_step1(cylinder_slab(), np.array([1.0, 0]))


# -------------------------------------------------------------- step 2

def test_step2_ball_jet():
    F, jet, N = fm_step2(model_jet(2))
    assert N == choose_N(1.0) == 9
    assert certify_CNk(jet, N, 0)[0]


def test_step2_kills_c():
    j = model_jet(2, d=2.0, N=1.5)
    j.H[0, 1] = 0.3 - 0.2j
    j.H[1, 0] = np.conj(j.H[0, 1])
    assert abs(j.c[0]) > 0
    F, out, N = fm_step2(j)
    assert abs(F.jets[0].c[0]) < 1e-14
    assert certify_CNk(out, N, 0)[0]


def test_step2_b_terms_below_lambda_then_removed():
    j = model_jet(2, d=1.5, N=1.0)
    j.Q[0, 1] = j.Q[1, 0] = 0.8
    F, out, N = fm_step2(j)
    eps = F.stages[2].params["eps"]
    pre = F.jets[1]
    assert eps * np.sum(np.abs(pre.b)) < LAMBDA
    assert np.max(np.abs(F.jets[3].b)) < 1e-12


def test_step2_requires_positive_d():
    with pytest.raises(NormalizationError):
        fm_step2(model_jet(2, d=-1.0))


# -------------------------------------------------------------- C(N, k)

def test_certify_zero_a():
    for N in (5, 9):
        for k in range(2 * (N - 4) + 1):
            ok, margin = certify_CNk(model_jet(2, d=2.0, N=N), N, k)
            assert ok and margin == pytest.approx(N - 4 - k / 2)


def test_certify_boundary_case():
    N, k = 9, 3
    bound = N - 4 - k / 2
    ok, margin = certify_CNk(model_jet(2, d=2.0, N=N, a=np.array([[bound]])), N, k)
    assert ok and margin == pytest.approx(0.0, abs=1e-12)
    ok, _ = certify_CNk(model_jet(2, d=2.0, N=N, a=np.array([[bound + 0.1]])), N, k)
    assert not ok


def test_certify_parameter_ranges():
    with pytest.raises(ValueError):
        certify_CNk(model_jet(2), 3, 0)
    with pytest.raises(ValueError):
        certify_CNk(model_jet(2), 6, 5)


@settings(max_examples=40, deadline=None)
@given(N=st.integers(5, 12), size=st.floats(0, 8), seed=st.integers(0, 2**32 - 1))
def test_certify_monotone_in_k(N, size, seed):
    a = random_symmetric(np.random.default_rng(seed), 2, size)
    jet = model_jet(3, d=2.0, N=N, a=a)
    prev = None
    for k in range(2 * (N - 4) + 1):
        ok, margin = certify_CNk(jet, N, k)
        if prev is not None:
            assert prev[1] - margin == pytest.approx(0.5)
            assert ok <= prev[0]
        prev = (ok, margin)


def test_takagi_values_match_sphere_maximum():
    rng = np.random.default_rng(2)
    a = random_symmetric(rng, 2, 1.0)
    Z = rng.normal(size=(20000, 2)) + 1j * rng.normal(size=(20000, 2))
    Z /= cnorm(Z)[:, None]
    sampled = np.abs(np.einsum("ki,ij,kj->k", Z, a, Z)).max()
    assert sampled <= takagi_values(a).max() + 1e-12
    assert sampled == pytest.approx(takagi_values(a).max(), rel=1e-2)


# -------------------------------------------------------------- step 3

def test_step3_zero_a_stays_zero():
    N = 6
    _, out = fm_step3(model_jet(2, d=2.0, N=N), N, 0)
    assert np.max(np.abs(out.a)) == 0


def test_step3_last_rung_clears_a():
    N = 6
    k = 2 * (N - 4) - 1
    jet = model_jet(2, d=2.0, N=N, a=np.array([[0.4]]))
    F, out = fm_step3(jet, N, k)
    assert np.max(np.abs(out.a)) < 1e-12
    assert certify_CNk(out, N, k + 1)[0]


@pytest.mark.parametrize("seed", range(3))
def test_step3_advances_certified_level(seed):
    N = 7
    rng = np.random.default_rng(seed)
    for k in range(2 * (N - 4)):
        bound = N - 4 - k / 2
        jet = model_jet(3, d=1.5, N=N, a=random_symmetric(rng, 2, 0.9 * bound))
        assert certify_CNk(jet, N, k)[0]
        _, out = fm_step3(jet, N, k)
        assert certify_CNk(out, N, k + 1)[0]


def test_step3_preconditions():
    with pytest.raises(ValueError):
        fm_step3(model_jet(2, d=2.0, N=4), 4, 0)
    with pytest.raises(NormalizationError):
        fm_step3(model_jet(2, d=2.0, N=6, a=np.array([[5.0]])), 6, 0)


# --------------------------------------------------------- full pipeline

def test_normalize_ball_exact():
    norm = fm_normalize(unit_ball(), np.array([1.0, 0]))
    assert_model(norm.jet, 1, 1, atol=1e-12)
    assert norm.r == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(norm.F(np.array([1.0, 0])), 0, atol=1e-14)


@pytest.mark.parametrize("cid", ["ellipsoid_1_4", "ellipsoid_1_2", "perturbed_ball"])
def test_normalize_catalog_domains(cid):
    D = get_domain(cid)
    p = D.boundary_samples(10, seed=3)[0]
    norm = fm_normalize(D, p)
    assert_model(norm.jet, 1, 1, atol=1e-9)
    assert np.isfinite(norm.r) and norm.r >= 1
    J = norm.F.jacobian(p)
    assert np.isfinite(np.linalg.cond(J))


def test_ellipsoid_containment_on_dense_samples():
    D = get_domain("ellipsoid_1_4")
    norm = fm_normalize(D, np.array([1.0, 0]))
    W = norm.F(D.boundary_samples(10_000, seed=21))
    # inside r B where B = {2 Re w1 + |w|^2 < 0} scaled by r
    assert np.all(cnorm(W) ** 2 + 2 * norm.r * W[:, 0].real <= 1e-9)


@pytest.mark.parametrize("cid,p", [("ball", [1.0, 0]), ("ellipsoid_1_4", [1.0, 0]), ("ellipsoid_1_2", [0, 2**-0.5]),
                                   ("perturbed_ball", [0, 0])])
def test_jet_transport_matches_numerical_reexpansion(cid, p):
    D = get_domain(cid)
    F = fm_normalize(D, np.asarray(p, dtype=complex), measure_r=False).F
    numeric = numerical_stage_jets(D, F)
    worst = max(j.distance(num) for j, num in zip(F.jets[1:], numeric))
    assert worst < 1e-9


def test_pipeline_round_trip_in_collar():
    D = get_domain("perturbed_ball")
    p = np.zeros(2)
    F = fm_normalize(D, p, measure_r=False).F
    rng = np.random.default_rng(4)
    Z = p + 0.02 * (rng.normal(size=(200, 2)) + 1j * rng.normal(size=(200, 2)))
    assert np.max(cnorm(F.inverse(F(Z)) - Z)) < 1e-10


@pytest.mark.parametrize("stage", [
    MapStage.translation(np.array([0.3, -0.1j])),
    MapStage.linear(np.array([[1, 0.2j], [0.1, 2]]), "lin"),
    MapStage.ball_aut_B(0.7, "phi4"),
    MapStage.quadratic_shear(2, b=np.array([0.2, 0.1j]), B=np.array([[0.3]])),
    MapStage.quadratic_shear(2, B=np.array([[0.5 - 0.2j]])),
])
def test_stage_round_trip(stage):
    rng = np.random.default_rng(0)
    Z = 0.1 * (rng.normal(size=(500, 2)) + 1j * rng.normal(size=(500, 2)))
    assert np.max(cnorm(stage.inverse(stage.forward(Z)) - Z)) < 1e-11


def test_pipeline_jacobian_chain_rule():
    F = fm_normalize(get_domain("ellipsoid_1_2"), np.array([1.0, 0]), measure_r=False).F
    z = np.array([0.98, 0.05j])
    J = F.jacobian(z)
    h = 1e-6
    for j in range(2):
        e = basis_vector(j) * h
        np.testing.assert_allclose(J[:, j], (F(z + e) - F(z - e)) / (2 * h), rtol=1e-6, atol=1e-6)
    assert isinstance(F.prefix(2), PipelineMap) and len(F.prefix(2)) == 2


# ------------------------------------------------------------- alignment

def test_align_shifted_ball_on_axis():
    res = align_axis(shifted_ball(), np.array([-0.1, 0]), np.zeros(2))
    np.testing.assert_allclose(res.q, 0, atol=1e-9)
    assert -1 < res.image[0].real < 0


def test_align_rotated_ball_is_equivariant():
    rng = np.random.default_rng(5)
    U, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    E = ellipsoid([1.0, 1.0], U)
    p0 = U @ np.array([1.0, 0])
    res = align_axis(E, U @ np.array([0.9, 0]), p0)
    np.testing.assert_allclose(res.q, p0, atol=1e-8)


def test_align_generic_ellipsoid_point():
    D = get_domain("ellipsoid_1_2")
    p0 = np.array([1.0, 0])
    z = p0 - 0.05 * outward_normal(D, p0) + np.array([0.01j, 0.02 - 0.01j])
    res = align_axis(D, z, p0)
    w = res.normalization.F(z)
    assert abs(w[0].imag) < 1e-8 and abs(w[1]) < 1e-8
    assert -1 < w[0].real < 0
    assert abs(float(D.value(res.q))) < 1e-10
