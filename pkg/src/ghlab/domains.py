"""Bounded domains given by polynomial defining functions.

Provides exact evaluation of rho and its derivatives, boundary projection,
outward normals, the Levi form, and the length functionals used for curves.
Every catalog domain also carries a ``BallChart``: an explicit biholomorphism
onto the unit ball, which supplies an exact reference Kobayashi metric.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .complex_core import (
    PathPolyline,
    as_cvector,
    ball_kr_metric,
    cnorm,
    herm_inner,
    to_complex,
    to_real,
)
from .polynomial import CPoly, RealPolynomial

CATALOG_SCHEMA_VERSION = "1.0"


class ProjectionError(RuntimeError):
    """Newton projection onto the boundary failed; carries the last residual."""

    def __init__(self, msg, residual=np.nan):
        super().__init__(f"{msg} (residual={residual:.3e})")
        self.residual = residual


class NotOnBoundaryError(ValueError):
    pass


# --------------------------------------------------------------------------
# Biholomorphic charts onto the unit ball
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BallChart:
    """Biholomorphism of the domain onto the unit ball.

    kind ``affine``: w = L z + b.  kind ``shear``: w = (z1 + c z2^2 + 1, z2, ...).
    """

    kind: str
    params: dict

    def to_ball(self, z):
        z = as_cvector(z)
        if self.kind == "affine":
            L = np.asarray(self.params["L"], dtype=complex)
            return z @ L.T + np.asarray(self.params["b"], dtype=complex)
        if self.kind == "shear":
            c = complex(self.params["c"])
            w = z.copy()
            w[..., 0] = z[..., 0] + c * z[..., 1] ** 2 + 1
            return w
        raise ValueError(self.kind)

    def from_ball(self, w):
        w = as_cvector(w)
        if self.kind == "affine":
            L = np.asarray(self.params["L"], dtype=complex)
            return (w - np.asarray(self.params["b"], dtype=complex)) @ np.linalg.inv(L).T
        if self.kind == "shear":
            c = complex(self.params["c"])
            z = w.copy()
            z[..., 0] = w[..., 0] - 1 - c * w[..., 1] ** 2
            return z
        raise ValueError(self.kind)

    def jacobian(self, z):
        z = as_cvector(z)
        n = z.shape[-1]
        if self.kind == "affine":
            L = np.asarray(self.params["L"], dtype=complex)
            return np.broadcast_to(L, z.shape[:-1] + (n, n))
        if self.kind == "shear":
            c = complex(self.params["c"])
            J = np.broadcast_to(np.eye(n, dtype=complex), z.shape[:-1] + (n, n)).copy()
            J[..., 0, 1] = 2 * c * z[..., 1]
            return J
        raise ValueError(self.kind)

    def push(self, z, X):
        """Differential of the chart at z applied to X."""
        z = as_cvector(z)
        X = np.asarray(X, dtype=complex)
        if self.kind == "affine":
            return X @ np.asarray(self.params["L"], dtype=complex).T
        if self.kind == "shear":
            c = complex(self.params["c"])
            Y = np.array(np.broadcast_to(X, np.broadcast_shapes(X.shape, z.shape)))
            Y[..., 0] = Y[..., 0] + 2 * c * z[..., 1] * Y[..., 1]
            return Y
        raise ValueError(self.kind)

    def metric(self, z, X):
        """Exact Kobayashi-Royden metric pulled back from the ball."""
        return ball_kr_metric(self.to_ball(z), self.push(z, X))

    def to_json(self):
        def enc(v):
            a = np.asarray(v)
            if np.iscomplexobj(a):
                return {"re": a.real.tolist(), "im": a.imag.tolist()}
            return a.tolist()

        return {"kind": self.kind, "params": {k: enc(v) for k, v in self.params.items()}}

    @classmethod
    def from_json(cls, data):
        def dec(v):
            if isinstance(v, dict):
                return np.asarray(v["re"]) + 1j * np.asarray(v["im"])
            return np.asarray(v)

        return cls(data["kind"], {k: dec(v) for k, v in data["params"].items()})


# --------------------------------------------------------------------------
# Domain model
# --------------------------------------------------------------------------

@dataclass
class DefiningFunction:
    poly: RealPolynomial
    n: int
    alpha: float = 1.0

    def __post_init__(self):
        if self.poly.nvars != 2 * self.n:
            raise ValueError("polynomial variables must be the 2n real coordinates")
        if self.poly.degree > 4:
            raise ValueError("defining functions are limited to total degree 4")


@dataclass
class DomainModel:
    rho: DefiningFunction
    bounding_radius: float
    catalog_id: str
    center: np.ndarray = None
    chart: BallChart = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.center is None:
            self.center = np.zeros(self.n, dtype=complex)
        self.center = as_cvector(self.center, self.n)

    @property
    def n(self):
        return self.rho.n

    def value(self, z):
        return self.rho.poly.value(to_real(as_cvector(z)))

    def contains(self, z):
        return self.value(z) < 0

    def value_near(self, anchor, h):
        """rho(anchor + h) from the polynomial re-expanded about ``anchor`` (no cancellation in h)."""
        anchor = as_cvector(anchor, self.n)
        key = ("shift", tuple(anchor.tolist()))
        if key not in self._cache:
            self._cache[key] = self.rho.poly.shifted(to_real(anchor))
        return self._cache[key].value(to_real(as_cvector(h)))

    def boundary_samples(self, m=2000, seed=0):
        """Points of the boundary: sphere images under the chart, or ray bisection."""
        key = ("bdry", m, seed)
        if key in self._cache:
            return self._cache[key]
        rng = np.random.default_rng(seed)
        u = rng.normal(size=(m, 2 * self.n))
        u = to_complex(u / np.linalg.norm(u, axis=1, keepdims=True))
        if self.chart is not None:
            pts = self.chart.from_ball(u)
        else:
            pts = self._ray_boundary(u)
        self._cache[key] = pts
        return pts

    def _ray_boundary(self, u, iters=80):
        lo = np.zeros(len(u))
        hi = np.full(len(u), 2.0 * self.bounding_radius + cnorm(self.center))
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            inside = self.contains(self.center + mid[:, None] * u)
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return self.center + 0.5 * (lo + hi)[:, None] * u

    def max_normal_curvature(self, m=400):
        key = ("curv", m)
        if key not in self._cache:
            pts = self.boundary_samples(m, seed=1)
            _, g, H = eval_rho(self, pts)
            kmax = 0.0
            for gi, Hi in zip(g, H):
                gn = np.linalg.norm(gi)
                # real tangent space basis
                q, _ = np.linalg.qr(np.column_stack([gi, np.eye(len(gi))]))
                T = q[:, 1:]
                kmax = max(kmax, np.linalg.eigvalsh(T.T @ Hi @ T).max() / gn)
            self._cache[key] = kmax
        return self._cache[key]

    @property
    def collar(self):
        """Half the minimal boundary curvature radius (measured)."""
        return 0.5 / self.max_normal_curvature()

    def certificate(self, m=200):
        pts = self.boundary_samples(m, seed=2)
        levi = min(levi_min_eig(self, p) for p in pts)
        _, g, _ = eval_rho(self, pts)
        inside = self.contains(self.center)
        samples = self.boundary_samples(m, seed=3)
        return {
            "min_levi": float(levi),
            "min_gradient": float(np.linalg.norm(g, axis=1).min()),
            "center_inside": bool(inside),
            "max_boundary_radius": float(cnorm(samples).max()),
        }

    def kr_metric(self, z, X):
        """Exact Kobayashi-Royden metric through the ball chart."""
        if self.chart is None:
            raise ValueError(f"domain {self.catalog_id!r} has no ball chart")
        return self.chart.metric(z, X)

    def to_json(self):
        return {
            "catalog_id": self.catalog_id,
            "dimension": self.n,
            "alpha": self.rho.alpha,
            "bounding_radius": self.bounding_radius,
            "center": {"re": self.center.real.tolist(), "im": self.center.imag.tolist()},
            "polynomial": self.rho.poly.to_json(),
            "chart": None if self.chart is None else self.chart.to_json(),
        }

    @classmethod
    def from_json(cls, data):
        poly = RealPolynomial.from_json(data["polynomial"])
        center = np.asarray(data["center"]["re"]) + 1j * np.asarray(data["center"]["im"])
        chart = None if data.get("chart") is None else BallChart.from_json(data["chart"])
        return cls(
            DefiningFunction(poly, data["dimension"], data.get("alpha", 1.0)),
            data["bounding_radius"],
            data["catalog_id"],
            center,
            chart,
        )


# --------------------------------------------------------------------------
# Catalog
# --------------------------------------------------------------------------

def _zs(n):
    return [CPoly.z(n, j) for j in range(n)]


def _domain(expr, n, radius, cid, center, chart):
    return DomainModel(DefiningFunction(expr.real(), n), radius, cid, center, chart)


def unit_ball(n=2):
    z = _zs(n)
    expr = sum((zj.abs2() for zj in z), CPoly.const(2 * n, -1.0))
    chart = BallChart("affine", {"L": np.eye(n, dtype=complex), "b": np.zeros(n, dtype=complex)})
    return _domain(expr, n, 1.0, "ball", np.zeros(n), chart)


def shifted_ball(n=2):
    """B = ball of radius 1 centred at (-1, 0, ..., 0)."""
    z = _zs(n)
    expr = (z[0] + 1).abs2() + sum((zj.abs2() for zj in z[1:]), CPoly.const(2 * n, -1.0))
    e1 = np.zeros(n, dtype=complex)
    e1[0] = 1
    chart = BallChart("affine", {"L": np.eye(n, dtype=complex), "b": e1})
    return _domain(expr, n, 2.0, "shifted_ball", -e1, chart)


def ellipsoid(mu, U=None, cid=None):
    """{sum mu_j |(U^* z)_j|^2 < 1}; U unitary (identity by default)."""
    mu = np.asarray(mu, dtype=float)
    n = len(mu)
    U = np.eye(n, dtype=complex) if U is None else np.asarray(U, dtype=complex)
    z = _zs(n)
    Uh = U.conj().T
    w = [sum((Uh[j, k] * z[k] for k in range(n)), CPoly.const(2 * n, 0.0)) for j in range(n)]
    expr = sum((m * wj.abs2() for m, wj in zip(mu, w)), CPoly.const(2 * n, -1.0))
    L = np.diag(np.sqrt(mu)) @ Uh
    chart = BallChart("affine", {"L": L, "b": np.zeros(n, dtype=complex)})
    cid = cid or "ellipsoid_" + "_".join(f"{m:g}" for m in mu)
    return _domain(expr, n, 1.0 / np.sqrt(mu.min()), cid, np.zeros(n), chart)


def perturbed_ball(c=0.3, n=2):
    """Shear image of B: rho = |z1 + 1 + c z2^2|^2 + |z'|^2 - 1.

    Near 0 this reads 2 Re z1 + |z|^2 + 2 Re(c z2^2) + 2 Re(conj(c) z1 conj(z2)^2)
    + |c|^2 |z2|^4, a degree-4 perturbation of the shifted ball.
    """
    if n < 2:
        raise ValueError("perturbed ball needs n >= 2")
    z = _zs(n)
    expr = (z[0] + 1 + c * z[1] ** 2).abs2() + sum((zj.abs2() for zj in z[1:]), CPoly.const(2 * n, -1.0))
    chart = BallChart("shear", {"c": complex(c)})
    center = np.zeros(n, dtype=complex)
    center[0] = -1
    radius = float(np.sqrt((2 + abs(c)) ** 2 + 1))
    return _domain(expr, n, radius, "perturbed_ball", center, chart)


def cylinder_slab(n=2):
    """Degenerate test model |z1|^2 - 1 (not bounded, not strongly pseudoconvex)."""
    z = _zs(n)
    return _domain(z[0].abs2() - 1, n, np.inf, "cylinder_slab", np.zeros(n), None)


def default_catalog(n=2):
    return {
        D.catalog_id: D
        for D in (
            unit_ball(n),
            shifted_ball(n),
            ellipsoid([1.0, 4.0] + [1.0] * (n - 2), cid="ellipsoid_1_4"),
            ellipsoid([1.0, 2.0] + [1.0] * (n - 2), cid="ellipsoid_1_2"),
            perturbed_ball(0.3, n),
        )
    }


def get_domain(catalog_id, n=2):
    cat = default_catalog(n)
    if catalog_id not in cat:
        raise KeyError(f"unknown domain id {catalog_id!r}; known: {sorted(cat)}")
    return cat[catalog_id]


def catalog_to_json(domains, with_certificates=True):
    doc = {"schema_version": CATALOG_SCHEMA_VERSION, "domains": []}
    for D in domains:
        entry = D.to_json()
        if with_certificates:
            entry["certificate"] = D.certificate()
            entry["collar"] = float(D.collar)
        doc["domains"].append(entry)
    return doc


def catalog_from_json(doc):
    from .schema import validate_catalog

    validate_catalog(doc)
    return {d["catalog_id"]: DomainModel.from_json(d) for d in doc["domains"]}


def save_catalog(path, domains):
    with open(path, "w") as fh:
        json.dump(catalog_to_json(domains), fh, indent=1)


def load_catalog(path):
    with open(path) as fh:
        return catalog_from_json(json.load(fh))


# --------------------------------------------------------------------------
# Derivatives, normals, Levi form
# --------------------------------------------------------------------------

def eval_rho(D, z):
    """(value, real gradient in R^2n, real Hessian 2n x 2n) of rho at z."""
    x = to_real(as_cvector(z, D.n))
    p = D.rho.poly
    return p.value(x), p.gradient(x), p.hessian(x)


def complex_derivatives(D, z):
    """(rho, d rho/dz, d2 rho/dz dz, d2 rho/dz dzbar) at z.

    With these, rho(z + h) = rho + 2 Re(l.h) + Re(h^T Q h) + h^T H conj(h) + O(3).
    """
    v, g, Hr = eval_rho(D, z)
    gx, gy = g[..., 0::2], g[..., 1::2]
    l = 0.5 * (gx - 1j * gy)
    xx = Hr[..., 0::2, 0::2]
    yy = Hr[..., 1::2, 1::2]
    xy = Hr[..., 0::2, 1::2]
    yx = Hr[..., 1::2, 0::2]
    Q = 0.25 * (xx - yy - 1j * (xy + yx))
    H = 0.25 * (xx + yy + 1j * (xy - yx))
    return v, l, Q, H


def outward_normal(D, z):
    g = _real_derivatives(D)[1](to_real(as_cvector(z, D.n)))
    n = to_complex(g)
    return n / cnorm(n)[..., None]


def levi_form(D, p):
    """Hermitian matrix L with form(v) = v^* L v = sum d2rho/dz_j dzbar_k v_j conj(v_k)."""
    _, _, _, H = complex_derivatives(D, p)
    return H.T


def complex_tangent_basis(nvec):
    """Orthonormal basis (columns) of the Hermitian complement of nvec."""
    nvec = np.asarray(nvec, dtype=complex)
    n = len(nvec)
    M = np.column_stack([nvec / np.linalg.norm(nvec), np.eye(n, dtype=complex)])
    q, _ = np.linalg.qr(M)
    return q[:, 1:n]


def levi_min_eig(D, p, tol=1e-8):
    p = as_cvector(p, D.n)
    if abs(D.value(p)) >= tol:
        raise NotOnBoundaryError(f"|rho(p)| = {abs(D.value(p)):.2e} >= {tol}")
    T = complex_tangent_basis(outward_normal(D, p))
    L = levi_form(D, p)
    return float(np.linalg.eigvalsh(T.conj().T @ L @ T).min())


# --------------------------------------------------------------------------
# Boundary projection
# --------------------------------------------------------------------------

def _real_derivatives(D, h1=1e-6, h2=1e-4):
    """(value, gradient, Hessian) callables on R^2n.

    Exact for polynomial domains; central differences of ``D.value`` for
    mapped or scaled domains, which only expose values.
    """
    rho = getattr(D, "rho", None)
    if rho is not None and hasattr(rho, "poly"):
        p = rho.poly
        return p.value, p.gradient, p.hessian

    def value(x):
        return D.value(to_complex(np.asarray(x, dtype=float)))

    def gradient(x):
        x = np.asarray(x, dtype=float)
        E = h1 * np.eye(x.shape[-1])
        return (value(x[..., None, :] + E) - value(x[..., None, :] - E)) / (2 * h1)

    def hessian(x):
        x = np.asarray(x, dtype=float)
        E = h2 * np.eye(x.shape[-1])
        return (gradient(x[..., None, :] + E) - gradient(x[..., None, :] - E)) / (2 * h2)

    return value, gradient, hessian


@dataclass(frozen=True)
class BoundaryFrame:
    pi_z: np.ndarray
    delta: float
    n_z: np.ndarray
    residual: float = 0.0


def project_boundary(D, z, tol=1e-12, max_iter=60, strict=False):
    """Closest boundary point by Newton on the Lagrange system.

    Solves y - x + mu grad rho(y) = 0, rho(y) = 0 in R^2n, with damping when
    the residual does not decrease.
    """
    z = as_cvector(z, D.n)
    if strict:
        val = D.value(z)
        if val >= 0:
            raise ProjectionError("point is not interior", abs(val))
    x = to_real(z)
    value, gradient, hessian = _real_derivatives(D)
    if not hasattr(getattr(D, "rho", None), "poly"):
        # finite-difference gradients cap the attainable residual
        tol = max(tol, 1e-9)
    m = len(x)

    def residual(y, mu):
        g = gradient(y)
        return np.concatenate([y - x + mu * g, [value(y)]])

    def newton(y):
        g0 = gradient(y)
        mu = (x - y) @ g0 / (g0 @ g0)
        r = residual(y, mu)
        rn = np.linalg.norm(r)
        for _ in range(max_iter):
            if rn < tol:
                break
            g = gradient(y)
            H = hessian(y)
            K = np.zeros((m + 1, m + 1))
            K[:m, :m] = np.eye(m) + mu * H
            K[:m, m] = g
            K[m, :m] = g
            step = np.linalg.solve(K, -r)
            lam = 1.0
            while lam > 1e-6:
                y2, mu2 = y + lam * step[:m], mu + lam * step[m]
                r2 = residual(y2, mu2)
                if np.linalg.norm(r2) < rn:
                    break
                lam *= 0.5
            else:
                raise ProjectionError("damped Newton stalled (point likely outside the collar)", rn)
            y, mu, r = y2, mu2, r2
            rn = np.linalg.norm(r)
        if rn >= max(tol, 1e-10):
            raise ProjectionError("Newton projection did not converge", rn)
        return y, rn

    g0 = gradient(x)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            y0 = x - value(x) / (g0 @ g0) * g0
        if not np.all(np.isfinite(y0)):
            raise ProjectionError("vanishing gradient at the start point")
        y, rn = newton(y0)
    except (ProjectionError, np.linalg.LinAlgError):
        # far from the boundary the gradient step is a poor start; use the
        # nearest sampled boundary point instead
        S = to_real(D.boundary_samples(2000, seed=0))
        y, rn = newton(S[np.argmin(np.linalg.norm(S - x, axis=-1))])
    pi = to_complex(y)
    nz = outward_normal(D, pi)
    delta = float(np.linalg.norm(x - y))
    if strict and delta > D.collar:
        raise ProjectionError(f"delta={delta:.3g} exceeds collar {D.collar:.3g}", rn)
    return BoundaryFrame(pi, delta, nz, float(rn))


def boundary_distance(D, z):
    """Euclidean distance to the boundary (Newton projection)."""
    return project_boundary(D, z).delta


def normal_component(v, frame):
    """v_z = <v, n_z> n_z."""
    n = frame.n_z if isinstance(frame, BoundaryFrame) else np.asarray(frame, dtype=complex)
    return herm_inner(v, n)[..., None] * n


# --------------------------------------------------------------------------
# Length functionals
# --------------------------------------------------------------------------

def euclid_length(path):
    V = path.vertices if isinstance(path, PathPolyline) else np.asarray(path)
    return float(np.sum(cnorm(np.diff(V, axis=0))))


def normal_length(path, anchor):
    """Sum over segments of |<dV, n>| for a fixed anchor normal."""
    V = path.vertices if isinstance(path, PathPolyline) else np.asarray(path)
    n = anchor.n_z if isinstance(anchor, BoundaryFrame) else np.asarray(anchor, dtype=complex)
    return float(np.sum(np.abs(herm_inner(np.diff(V, axis=0), n))))
