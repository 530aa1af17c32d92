"""Complex-linear algebra, Moebius maps and the Kobayashi geometry of the unit ball.

Points of C^n are plain complex numpy arrays whose last axis is the coordinate
axis, so every function here broadcasts over leading batch dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POLE_GUARD = 1e-14


class PoleError(ZeroDivisionError):
    """A Moebius-type denominator vanished (magnitude below ``POLE_GUARD``)."""


class OutsideBallError(ValueError):
    pass


def as_cvector(z, n=None):
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        z = z.reshape(1)
    if n is not None and z.shape[-1] != n:
        raise ValueError(f"expected dimension {n}, got {z.shape[-1]}")
    return z


def basis_vector(j, n=2):
    e = np.zeros(n, dtype=complex)
    e[j] = 1.0
    return e


def herm_inner(u, v):
    """Hermitian inner product <u, v> = sum u_j conj(v_j)."""
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    return np.sum(u * np.conj(v), axis=-1)


def cnorm(z):
    """Euclidean norm over the last axis, scaled by the largest entry (safe for tiny and huge entries)."""
    a = np.abs(np.asarray(z))
    m = np.max(a, axis=-1, keepdims=True) if a.shape[-1] else np.zeros(a.shape[:-1] + (1,))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.sqrt(np.sum((a / np.where(m > 0, m, 1)) ** 2, axis=-1))
    return np.where(np.isfinite(m[..., 0]), m[..., 0] * r, np.inf)


def to_real(z):
    """C^n -> R^2n with ordering (Re z1, Im z1, Re z2, Im z2, ...)."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def to_complex(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0::2] + 1j * x[..., 1::2]


def _guard(den):
    if np.any(np.abs(den) < POLE_GUARD):
        raise PoleError("denominator below pole guard")
    return den


# --------------------------------------------------------------------------
# Moebius maps of the disc and automorphisms of the ball fixing e1
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MobiusParam:
    """Real parameter t of m_t(l) = (l + t) / (1 + t l), |t| < 1."""

    t: float

    def __post_init__(self):
        if not np.isfinite(self.t) or abs(self.t) >= 1:
            raise ValueError(f"Moebius parameter must satisfy |t| < 1, got {self.t}")


def mobius_apply(t, lam, direction="forward"):
    t = t.t if isinstance(t, MobiusParam) else MobiusParam(float(t)).t
    lam = np.asarray(lam, dtype=complex)
    if direction == "forward":
        return (lam + t) / _guard(1 + t * lam)
    if direction == "inverse":
        return (lam - t) / _guard(1 - t * lam)
    raise ValueError(f"unknown direction {direction!r}")


def mobius_derivative(t, lam):
    lam = np.asarray(lam, dtype=complex)
    return (1 - t * t) / _guard(1 + t * lam) ** 2


def mobius_iterate(x, k, t=0.5, direction="inverse"):
    """k-fold composition of m_t (or its inverse)."""
    x = np.asarray(x, dtype=complex)
    for _ in range(k):
        x = mobius_apply(t, x, direction)
    return x


@dataclass(frozen=True)
class BallAutomorphism:
    """A_t(z) = (m_t(z1), sqrt(1 - t^2) z' / (1 + t z1)).

    Maps the unit ball onto itself and fixes +-e1.
    """

    t: float

    def __post_init__(self):
        if not (0 < self.t < 1):
            raise ValueError(f"ball automorphism needs 0 < t < 1, got {self.t}")

    def __call__(self, z):
        return ball_aut_apply(self, z)

    def inverse(self, z):
        return ball_aut_apply(self, z, "inverse")

    def jacobian(self, z):
        return ball_aut_jacobian(self, z)


def ball_aut_apply(A, z, direction="forward"):
    t = A.t if isinstance(A, BallAutomorphism) else float(A)
    if direction == "inverse":
        t = -t
    elif direction != "forward":
        raise ValueError(f"unknown direction {direction!r}")
    z = as_cvector(z)
    den = _guard(1 + t * z[..., 0])
    out = np.empty_like(z)
    out[..., 0] = (z[..., 0] + t) / den
    out[..., 1:] = np.sqrt(1 - t * t) * z[..., 1:] / den[..., None]
    return out


def ball_aut_jacobian(A, z, direction="forward"):
    """Exact complex Jacobian dA_t(z), shape (..., n, n)."""
    t = A.t if isinstance(A, BallAutomorphism) else float(A)
    if direction == "inverse":
        t = -t
    z = as_cvector(z)
    n = z.shape[-1]
    den = _guard(1 + t * z[..., 0])
    s = np.sqrt(1 - t * t)
    J = np.zeros(z.shape[:-1] + (n, n), dtype=complex)
    J[..., 0, 0] = (1 - t * t) / den**2
    for j in range(1, n):
        J[..., j, 0] = -s * t * z[..., j] / den**2
        J[..., j, j] = s / den
    return J


# --------------------------------------------------------------------------
# Closed-form Kobayashi geometry of the unit ball
# --------------------------------------------------------------------------

def _check_in_ball(*zs):
    for z in zs:
        if np.any(cnorm(z) >= 1):
            raise OutsideBallError("point outside the open unit ball")


def ball_kr_metric(z, X):
    """Kobayashi-Royden metric of the unit ball.

    kappa(z; X)^2 = |X|^2 / (1 - |z|^2) + |<X, z>|^2 / (1 - |z|^2)^2,
    normalised so that kappa(0; X) = |X|.
    """
    z = as_cvector(z)
    X = np.asarray(X, dtype=complex)
    _check_in_ball(z)
    q = 1 - cnorm(z) ** 2
    # factor out |X| so tiny or huge vectors neither underflow nor overflow when squared
    s = cnorm(X)
    with np.errstate(invalid="ignore", divide="ignore"):
        U = X / np.where(s > 0, s, 1)[..., None]
    val = 1 / q + np.abs(herm_inner(U, z)) ** 2 / q**2
    return s * np.sqrt(val)


def ball_involution(a, z):
    """The automorphism phi_a of the ball exchanging a and 0 (phi_a o phi_a = id)."""
    a = as_cvector(a)
    z = as_cvector(z)
    aa = np.sum(np.abs(a) ** 2, axis=-1)
    za = herm_inner(z, a)
    den = _guard(1 - za)
    if np.all(aa == 0):
        return -z
    sa = np.sqrt(1 - aa)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = np.where(aa[..., None] > 0, (za / np.where(aa > 0, aa, 1))[..., None] * a, 0)
    return (a - P - sa[..., None] * (z - P)) / den[..., None]


def ball_kob_distance(z, w):
    """Kobayashi distance of the unit ball, arctanh |phi_z(w)|."""
    z = as_cvector(z)
    w = as_cvector(w)
    _check_in_ball(z, w)
    num = (1 - cnorm(z) ** 2) * (1 - cnorm(w) ** 2)
    s2 = 1 - num / np.abs(1 - herm_inner(w, z)) ** 2
    s = np.sqrt(np.clip(s2, 0.0, None))
    return np.arctanh(s)


@dataclass
class PathPolyline:
    """Sampled curve: ordered vertices in C^n plus monotone parameter marks."""

    vertices: np.ndarray
    marks: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=complex))
        if len(self.vertices) < 1:
            raise ValueError("path needs at least one vertex")
        if self.marks is None:
            self.marks = np.linspace(0.0, 1.0, len(self.vertices))
        self.marks = np.asarray(self.marks, dtype=float)
        if self.marks.shape != (len(self.vertices),):
            raise ValueError("one mark per vertex required")
        if np.any(np.diff(self.marks) < 0):
            raise ValueError("parameter marks must be monotone")

    @property
    def dim(self):
        return self.vertices.shape[1]

    def __len__(self):
        return len(self.vertices)

    def concat(self, other):
        if not np.allclose(self.vertices[-1], other.vertices[0], atol=1e-14):
            raise ValueError("paths do not share an endpoint")
        shift = self.marks[-1] - other.marks[0]
        return PathPolyline(
            np.vstack([self.vertices, other.vertices[1:]]),
            np.concatenate([self.marks, other.marks[1:] + shift]),
        )

    def first_coordinate(self):
        return self.vertices[:, 0]


@dataclass
class AnalyticDisc:
    """Holomorphic disc phi(l) = sum_k c_k l^k / (1 + pole * l).

    ``pole == 0`` gives a truncated power series.  The common scalar
    denominator lets Moebius-type extremals be represented exactly.
    """

    coeffs: np.ndarray
    pole: complex = 0.0
    m: int = 64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if abs(self.pole) >= 1:
            raise ValueError("denominator pole must lie outside the closed disc")

    @property
    def degree(self):
        return len(self.coeffs) - 1

    @property
    def center(self):
        return self.coeffs[0].copy()

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=complex)
        powers = lam[..., None] ** np.arange(len(self.coeffs))
        num = powers @ self.coeffs
        return num / (1 + self.pole * lam)[..., None]

    def derivative_at_zero(self):
        return self.coeffs[1] - self.pole * self.coeffs[0]

    def boundary_values(self, m=None, radius=1.0):
        m = self.m if m is None else m
        lam = radius * np.exp(2j * np.pi * np.arange(m) / m)
        return self(lam)

    def preimage(self, x):
        """Least-squares parameter of x for an affine disc a + l b."""
        if self.degree != 1 or self.pole != 0:
            raise ValueError("preimage only defined for affine discs")
        a, b = self.coeffs
        lam = herm_inner(np.asarray(x) - a, b) / np.sum(np.abs(b) ** 2)
        resid = cnorm(np.asarray(x) - self(lam))
        return lam, resid


def ball_complex_geodesic(z, w):
    """Affine disc l -> a + l b whose range is the ball slice through z and w."""
    z = as_cvector(z)
    w = as_cvector(w)
    _check_in_ball(z, w)
    d = w - z
    nd = cnorm(d)
    if nd == 0:
        raise ValueError("coincident points do not determine a complex line")
    u = d / nd
    a = z - herm_inner(z, u) * u
    R = np.sqrt(1 - cnorm(a) ** 2)
    return AnalyticDisc(np.array([a, R * u]), meta={"radius": R})


def ball_real_geodesic(z, w, m=65):
    """Polyline sampling the Kobayashi geodesic of the ball from z to w.

    Vertices are equally spaced in Kobayashi arclength; the geodesic is the
    image of a radial segment under the involution exchanging z and 0.
    """
    z = as_cvector(z)
    w = as_cvector(w)
    if m < 2:
        raise ValueError("need at least two samples")
    if np.allclose(z, w, rtol=0, atol=0):
        raise ValueError("coincident points")
    u = ball_involution(z, w)
    dist = np.arctanh(cnorm(u))
    taus = np.linspace(0.0, dist, m)
    radial = np.tanh(taus)[:, None] * (u / cnorm(u))[None, :]
    verts = ball_involution(z, radial)
    verts[0] = z
    verts[-1] = w
    return PathPolyline(verts, taus)
