import json
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from ghlab.complex_core import PathPolyline, basis_vector, cnorm, to_complex, to_real
from ghlab.domains import (
    BoundaryFrame,
    DefiningFunction,
    NotOnBoundaryError,
    ProjectionError,
    catalog_from_json,
    catalog_to_json,
    complex_derivatives,
    cylinder_slab,
    default_catalog,
    ellipsoid,
    euclid_length,
    eval_rho,
    get_domain,
    levi_min_eig,
    load_catalog,
    normal_component,
    normal_length,
    outward_normal,
    project_boundary,
    save_catalog,
    shifted_ball,
    unit_ball,
)
from ghlab.polynomial import CPoly


# ----------------------------------------------------------- evaluation

def test_ball_value_gradient_hessian_at_origin():
    v, g, H = eval_rho(unit_ball(), np.zeros(2))
    assert v == -1
    np.testing.assert_array_equal(g, np.zeros(4))
    np.testing.assert_array_equal(H, 2 * np.eye(4))


def test_shifted_ball_is_the_model_at_origin():
    B = shifted_ball()
    v, g, H = eval_rho(B, np.zeros(2))
    assert v == 0
    np.testing.assert_allclose(g, [2, 0, 0, 0])
    # rho = 2 Re z1 + |z|^2 identically
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(50, 2)) + 1j * rng.normal(size=(50, 2))
    np.testing.assert_allclose(B.value(Z), 2 * Z[:, 0].real + cnorm(Z) ** 2, atol=1e-12)


def test_hessian_symmetric_and_derivatives_match_fd():
    D = get_domain("perturbed_ball")
    z = np.array([-0.3 + 0.2j, 0.4 - 0.1j])
    v, g, H = eval_rho(D, z)
    np.testing.assert_array_equal(H, H.T)
    x = to_real(z)
    h = 1e-6
    fd = [(D.value(to_complex(x + h * e)) - D.value(to_complex(x - h * e))) / (2 * h) for e in np.eye(4)]
    np.testing.assert_allclose(g, fd, atol=1e-8)


def test_complex_derivatives_reproduce_second_order_expansion():
    D = get_domain("perturbed_ball")
    z = np.array([-0.5, 0.3j])
    v, l, Q, H = complex_derivatives(D, z)
    h = 1e-3 * np.array([0.7 - 0.2j, -0.4 + 0.9j])
    approx = v + 2 * np.real(l @ h) + np.real(h @ Q @ h) + np.real(h @ H @ h.conj())
    assert D.value(z + h) == pytest.approx(approx, abs=1e-8)


def test_degree_limit():
    z = CPoly.z(2, 0)
    with pytest.raises(ValueError):
        DefiningFunction((z.abs2() * z.abs2() * z.abs2()).real(), 2)


# ------------------------------------------------------------------ Levi

def test_levi_unit_ball_is_one():
    B = unit_ball()
    for p in B.boundary_samples(20, seed=4):
        assert levi_min_eig(B, p) == pytest.approx(1.0, abs=1e-12)


def test_levi_ellipsoid_against_dense_eigensolve():
    E = get_domain("ellipsoid_1_4")
    p = np.array([1.0, 0])
    # complex tangent at (1, 0) is span(e2); Levi form there is diag(1, 4)
    assert levi_min_eig(E, p) == pytest.approx(4.0, rel=1e-12)
    q = np.array([0, 0.5])
    assert levi_min_eig(E, q) == pytest.approx(1.0, rel=1e-12)


def test_levi_degenerate_cylinder_is_zero():
    assert levi_min_eig(cylinder_slab(), np.array([1.0, 0])) == pytest.approx(0.0, abs=1e-14)


def test_levi_requires_boundary_point():
    with pytest.raises(NotOnBoundaryError):
        levi_min_eig(unit_ball(), np.zeros(2))


def test_levi_unitary_invariance():
    rng = np.random.default_rng(3)
    U, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    mu = [1.0, 3.0]
    E, EU = ellipsoid(mu), ellipsoid(mu, U)
    for p in E.boundary_samples(10, seed=1):
        assert levi_min_eig(EU, U @ p) == pytest.approx(levi_min_eig(E, p), abs=1e-10)


def test_catalog_certificates_positive():
    for D in default_catalog().values():
        cert = D.certificate(m=100)
        assert cert["min_levi"] > 0 and cert["min_gradient"] > 0 and cert["center_inside"]
        assert cert["max_boundary_radius"] <= D.bounding_radius + cnorm(D.center) + 1e-9


# ------------------------------------------------------------ projection

def test_projection_ball_radial():
    f = project_boundary(unit_ball(), np.array([0.9, 0]))
    np.testing.assert_allclose(f.pi_z, [1, 0], atol=1e-12)
    assert f.delta == pytest.approx(0.1, abs=1e-12)
    np.testing.assert_allclose(f.n_z, [1, 0], atol=1e-12)


def test_projection_shifted_ball():
    f = project_boundary(shifted_ball(), np.array([-0.1, 0]))
    np.testing.assert_allclose(f.pi_z, [0, 0], atol=1e-12)
    assert f.delta == pytest.approx(0.1, abs=1e-12)


def _mesh_projection(D, z):
    """Oracle: nearest point of a dense boundary mesh, polished by constrained minimisation."""
    S = D.boundary_samples(20000, seed=11)
    y0 = to_real(S[np.argmin(cnorm(S - z))])
    x = to_real(z)
    poly = D.rho.poly
    res = minimize(lambda y: np.sum((y - x) ** 2), y0, jac=lambda y: 2 * (y - x), method="SLSQP",
                   constraints=[{"type": "eq", "fun": poly.value, "jac": poly.gradient}],
                   options={"ftol": 1e-15, "maxiter": 200})
    return to_complex(res.x)


@pytest.mark.parametrize("cid", ["ellipsoid_1_4", "ellipsoid_1_2", "perturbed_ball"])
def test_projection_against_mesh_oracle(cid):
    D = get_domain(cid)
    rng = np.random.default_rng(7)
    S = D.boundary_samples(50, seed=5)
    for p in S[:5]:
        z = p - 0.05 * outward_normal(D, p) + 0.01 * (rng.normal(size=2) + 1j * rng.normal(size=2))
        if not D.contains(z):
            continue
        f = project_boundary(D, z)
        assert cnorm(f.pi_z - _mesh_projection(D, z)) < 1e-6


@pytest.mark.parametrize("cid", sorted(default_catalog()))
def test_boundary_frame_invariants(cid):
    D = get_domain(cid)
    for p in D.boundary_samples(8, seed=9):
        z = p - 0.03 * outward_normal(D, p)
        f = project_boundary(D, z)
        assert abs(D.value(f.pi_z)) < 1e-10
        assert cnorm(f.n_z) == pytest.approx(1.0, abs=1e-12)
        ip = np.vdot(f.n_z, z - f.pi_z)
        assert ip.real == pytest.approx(-f.delta, abs=1e-8)
        assert abs(ip.imag) < 1e-8


def test_collar_consistency():
    D = get_domain("perturbed_ball")
    p = D.boundary_samples(5, seed=2)[0]
    f = project_boundary(D, p - 0.02 * outward_normal(D, p))
    h = 1e-3
    g = project_boundary(D, f.pi_z - (f.delta + h) * f.n_z)
    assert cnorm(g.pi_z - f.pi_z) < 1e-8
    assert g.delta - f.delta == pytest.approx(h, abs=1e-8)


def test_strict_projection_rejects_outside_and_far_points():
    B = unit_ball()
    with pytest.raises(ProjectionError):
        project_boundary(B, np.array([1.5, 0]), strict=True)
    with pytest.raises(ProjectionError):
        project_boundary(B, np.zeros(2) + 0.01, strict=True)


# -------------------------------------------------------- normal component

def test_normal_component_examples():
    frame = BoundaryFrame(np.array([1, 0]), 0.0, np.array([1, 0], dtype=complex))
    np.testing.assert_allclose(normal_component(frame.n_z, frame), frame.n_z)
    np.testing.assert_allclose(normal_component(np.array([0, 1j]), frame), 0)
    np.testing.assert_allclose(normal_component(np.array([1, 1]), frame), [1, 0])


def test_normal_component_is_idempotent_contraction():
    rng = np.random.default_rng(1)
    n = rng.normal(size=2) + 1j * rng.normal(size=2)
    n /= cnorm(n)
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    vz = normal_component(v, n)
    np.testing.assert_allclose(normal_component(vz, n), vz, atol=1e-15)
    assert cnorm(vz) <= cnorm(v)


# ------------------------------------------------------------------ lengths

def test_euclid_length_examples():
    z, w = np.array([0.1, 0.2j]), np.array([-0.3, 0.5])
    assert euclid_length(PathPolyline(np.array([z, w]))) == pytest.approx(cnorm(w - z))
    s = 0.25
    square = np.array([[0, 0], [s, 0], [s, 1j * s], [0, 1j * s], [0, 0]])
    assert euclid_length(square) == pytest.approx(4 * s)
    fine = np.linspace(z, w, 101)
    assert euclid_length(fine) == pytest.approx(cnorm(w - z), abs=1e-14)


def test_normal_length_examples():
    n = np.array([1, 0], dtype=complex)
    assert normal_length(np.array([[0, 0], [0.3, 0]]), n) == pytest.approx(0.3)
    assert normal_length(np.array([[0, 0], [0, 0.3j]]), n) == 0
    seg = np.array([[0, 0], [0.2, 0.2]])
    assert normal_length(seg, n) == pytest.approx(euclid_length(seg) / math.sqrt(2))


def test_length_inequalities_on_random_paths():
    rng = np.random.default_rng(2)
    n = basis_vector(0)
    for _ in range(50):
        V = rng.normal(size=(7, 2)) + 1j * rng.normal(size=(7, 2))
        L = euclid_length(V)
        assert cnorm(V[-1] - V[0]) <= L + 1e-12
        assert normal_length(V, n) <= L + 1e-12


# ------------------------------------------------------------------ catalog

def test_catalog_json_round_trip(tmp_path):
    doms = list(default_catalog().values())
    path = tmp_path / "catalog.json"
    save_catalog(path, doms)
    back = load_catalog(path)
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(20, 2)) + 1j * rng.normal(size=(20, 2))
    for D in doms:
        E = back[D.catalog_id]
        np.testing.assert_allclose(E.value(Z), D.value(Z), atol=1e-13)
        np.testing.assert_allclose(E.chart.to_ball(Z), D.chart.to_ball(Z), atol=1e-13)


def test_catalog_schema_rejects_bad_documents():
    doc = catalog_to_json([unit_ball()], with_certificates=False)
    bad = json.loads(json.dumps(doc))
    bad["domains"][0]["dimension"] = 0
    with pytest.raises(ValueError, match="dimension"):
        catalog_from_json(bad)
    bad = json.loads(json.dumps(doc))
    bad["schema_version"] = "9"
    with pytest.raises(ValueError, match="schema_version"):
        catalog_from_json(bad)


def test_chart_maps_boundary_to_sphere():
    for D in default_catalog().values():
        S = D.boundary_samples(200, seed=3)
        np.testing.assert_allclose(cnorm(D.chart.to_ball(S)), 1.0, atol=1e-12)
        np.testing.assert_allclose(D.value(S), 0.0, atol=1e-12)
