"""Lempert scaling by ball automorphisms and the Moebius estimates built on it.

A domain D_0 touching the unit sphere from inside at e1 is pulled back by
A_t, D_t = A_t^{-1}(D_0), with the defining function

    rho_t(z) = |1 + t z1|^2 / (1 - t^2) * rho_0(A_t(z)),

which is exactly |z|^2 - 1 when D_0 is the unit ball.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .complex_core import (
    BallAutomorphism,
    PathPolyline,
    as_cvector,
    ball_aut_apply,
    ball_aut_jacobian,
    basis_vector,
    cnorm,
    mobius_apply,
    mobius_iterate,
    to_real,
)
from .normalization import PipelineMap, cauchy_radius, fm_normalize, numerical_jet


class ContainmentError(ValueError):
    pass


# --------------------------------------------------------------------------
# Domains given as images of catalog domains
# --------------------------------------------------------------------------

class ComposedChart:
    """Chart of an image domain: ``chart`` after the map ``pre`` back to the base.

    ``pre_push(w, X)`` is the differential of ``pre`` at w applied to X and
    ``valid(w)`` flags points where ``pre`` is trusted.
    """

    def __init__(self, chart, pre, pre_push, valid):
        self.chart = chart
        self.pre = pre
        self.pre_push = pre_push
        self._valid = valid

    def valid(self, w):
        base_valid = getattr(self.chart, "valid", None)
        ok = self._valid(w)
        if base_valid is not None:
            with np.errstate(all="ignore"):
                ok = ok & base_valid(np.where(ok[..., None], self.pre(w), 0))
        return ok

    def to_ball(self, w):
        return self.chart.to_ball(self.pre(w))

    def frame(self, w, X):
        """(to_ball(w), push(w, X), valid(w)) with a single evaluation of ``pre``."""
        with np.errstate(all="ignore"):
            z = self.pre(w)
            ok = self._valid(w)
            zs = np.where(ok[..., None], z, 0)
            Y = self.pre_push(w, X)
            base_frame = getattr(self.chart, "frame", None)
            if base_frame is not None:
                W, Y2, ok2 = base_frame(zs, Y)
                return W, Y2, ok & ok2
            return self.chart.to_ball(zs), self.chart.push(zs, Y), ok

    def push(self, w, X):
        return self.chart.push(self.pre(w), self.pre_push(w, X))

class MappedDomain:
    """Image G(D) of a catalog domain under a holomorphic map with known inverse.

    ``rho(w) = factor(w) * rho_D(G^{-1}(w))``.  Points where the inverse is
    not finite, or does not round-trip, count as outside.
    """

    def __init__(self, base, forward, inverse, jacobian, factor=None, poly=None, offset=None, name="",
                 anchor=None, inverse_offset=None):
        self.base = base
        self.forward = forward
        self.inverse = inverse
        self.jacobian = jacobian
        self.factor = factor
        self._poly = base.rho.poly if poly is None else poly
        self._offset = np.zeros(base.n, dtype=complex) if offset is None else offset
        self.catalog_id = name or f"mapped({base.catalog_id})"
        # inverse_offset(h) = G^{-1}(anchor + h) - offset, evaluated without forming anchor + h
        self._anchor = None if anchor is None else as_cvector(anchor)
        self._inverse_offset = inverse_offset
        self._cache = {}

    @property
    def n(self):
        return self.base.n

    @property
    def chart(self):
        base = getattr(self.base, "chart", None)
        if base is None:
            return None

        def pre_push(w, X):
            J = self.jacobian(self.inverse(w))
            X = np.broadcast_to(np.asarray(X, dtype=complex), np.shape(w))
            return np.linalg.solve(J, X[..., None])[..., 0]

        return ComposedChart(base, self.inverse, pre_push, self._round_trip)

    def _round_trip(self, w):
        w = as_cvector(w)
        with np.errstate(all="ignore"):
            z = self.inverse(w)
            back = self.forward(z)
            return np.all(np.isfinite(z), axis=-1) & (cnorm(back - w) < 1e-8 * (1 + cnorm(w)))

    def preimage(self, w):
        """Offset of G^{-1}(w) from ``offset`` (the base point of the shifted polynomial)."""
        return self.inverse(as_cvector(w)) - self._offset

    def value(self, w):
        w = as_cvector(w)
        with np.errstate(all="ignore"):
            h = self.preimage(w)
            v = self._poly.value(to_real(h))
            if self.factor is not None:
                v = v * self.factor(w)
        return np.where(np.isfinite(v), v, np.inf)

    def value_near(self, anchor, h):
        """rho(anchor + h); exact offsets are used when ``anchor`` is the declared anchor."""
        anchor = as_cvector(anchor)
        h = as_cvector(h)
        if self._inverse_offset is None or self._anchor is None or not np.array_equal(anchor, self._anchor):
            return self.value(anchor + h)
        with np.errstate(all="ignore"):
            v = self._poly.value(to_real(self._inverse_offset(h)))
            if self.factor is not None:
                v = v * self.factor(anchor + h)
        return np.where(np.isfinite(v), v, np.inf)

    def contains(self, w):
        return self._round_trip(w) & (self.value(w) < 0)

    def boundary_samples(self, m=2000, seed=0):
        key = (m, seed)
        if key not in self._cache:
            self._cache[key] = self.forward(self.base.boundary_samples(m, seed))
        return self._cache[key]

    def kr_metric(self, w, X):
        w = as_cvector(w)
        z = self.inverse(w)
        Y = np.linalg.solve(self.jacobian(z), np.asarray(X, dtype=complex)[..., None])[..., 0]
        return self.base.kr_metric(z, Y)


def normalized_domain(D, p, **kw):
    """D_0 = T_{e1}(F_p(D)): touches the sphere at e1 with 2-jet |w|^2 - 1 there.

    The defining function is rho o F_p^{-1}(w - e1) times the positive factor
    exp(2 Re(mu (w1 - 1))) / s that makes its 2-jet at e1 exactly that of the
    unit sphere.
    """
    norm = fm_normalize(D, p, **kw)
    F = norm.F
    p = F.stages[0].params["p"]
    tail = PipelineMap(F.stages[1:], F.jets[1:])
    poly = D.rho.poly.shifted(to_real(p))
    n = D.n
    e1 = basis_vector(0, n)
    raw = numerical_jet(D, tail.inverse, radius=cauchy_radius(tail.stages, n), base=p)
    s = raw.ell[0].real
    mu = -raw.Q[0, 0] / (2 * s)

    def factor(w):
        return np.exp(2 * np.real(mu * (w[..., 0] - 1))) / s

    out = MappedDomain(
        D,
        forward=lambda z: F(z) + e1,
        inverse=lambda w: F.inverse(as_cvector(w) - e1),
        jacobian=F.jacobian,
        factor=factor,
        poly=poly,
        offset=p,
        name=f"normalized({D.catalog_id})",
        anchor=e1,
        inverse_offset=tail.inverse,
    )
    out.normalization = norm
    out.jet_factor = (s, mu)
    return out


# --------------------------------------------------------------------------
# Scaled domains
# --------------------------------------------------------------------------

@dataclass
class ScaledDomain:
    base: object
    t: float
    s_prime: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.base.n

    @property
    def catalog_id(self):
        return f"scaled({getattr(self.base, 'catalog_id', 'D0')}, t={self.t:g})"

    @property
    def automorphism(self):
        return BallAutomorphism(self.t)

    @property
    def chart(self):
        base = getattr(self.base, "chart", None)
        if base is None:
            return None
        t = self.t

        def pre(z):
            with np.errstate(all="ignore"):
                return _safe_aut(t, z)

        def pre_push(z, X):
            J = ball_aut_jacobian(t, z)
            return (J @ np.asarray(X, dtype=complex)[..., None])[..., 0]

        def valid(z):
            return np.all(np.isfinite(pre(z)), axis=-1)

        return ComposedChart(base, pre, pre_push, valid)

    def rho_t(self, z):
        z = as_cvector(z)
        t = self.t
        e1 = basis_vector(0, z.shape[-1])
        with np.errstate(all="ignore"):
            h, den = _aut_offset(t, z)
            factor = np.abs(den) ** 2 / ((1 - t) * (1 + t))
            near = getattr(self.base, "value_near", None)
            rho0 = near(e1, h) if near is not None else self.base.value(e1 + h)
            v = factor * rho0
        return np.where(np.isfinite(v), v, np.inf)

    value = rho_t

    def contains(self, z):
        z = as_cvector(z)
        with np.errstate(all="ignore"):
            w = _safe_aut(self.t, z)
        return np.all(np.isfinite(w), axis=-1) & self.base.contains(w)

    def boundary_samples(self, m=2000, seed=0):
        key = (m, seed)
        if key not in self._cache:
            self._cache[key] = ball_aut_apply(self.t, self.base.boundary_samples(m, seed), "inverse")
        return self._cache[key]

    def kr_metric(self, z, X):
        z = as_cvector(z)
        J = ball_aut_jacobian(self.t, z)
        Y = (J @ np.asarray(X, dtype=complex)[..., None])[..., 0]
        return self.base.kr_metric(ball_aut_apply(self.t, z), Y)


def _aut_offset(t, z):
    """(A_t(z) - e1, 1 + t z1), the first entry free of cancellation near e1."""
    den = 1 + t * z[..., 0]
    den = np.where(np.abs(den) < 1e-14, np.nan, den)
    h = np.empty_like(z)
    h[..., 0] = (1 - t) * (z[..., 0] - 1) / den
    h[..., 1:] = np.sqrt((1 - t) * (1 + t)) * z[..., 1:] / den[..., None]
    return h, den


def _safe_aut(t, z):
    z = as_cvector(z)
    den = 1 + t * z[..., 0]
    den = np.where(np.abs(den) < 1e-14, np.nan, den)
    out = np.empty_like(z)
    out[..., 0] = (z[..., 0] + t) / den
    out[..., 1:] = np.sqrt(1 - t * t) * z[..., 1:] / den[..., None]
    return out


def lempert_scale(D0, t, m=4000, tol=1e-9):
    """D_t = A_t^{-1}(D_0) for a domain touching the sphere from inside at e1."""
    if not 0 < t < 1:
        raise ValueError(f"scaling parameter must lie in (0, 1), got {t}")
    n = D0.n
    e1 = basis_vector(0, n)
    if abs(float(np.asarray(D0.value(e1)))) > 1e-8:
        raise ContainmentError("e1 is not a boundary point of D0")
    X = D0.boundary_samples(m, seed=7)
    X = X[np.all(np.isfinite(X), axis=-1)]
    gap = 1 - X[:, 0].real
    far = cnorm(X - e1) > 1e-6
    if np.any(gap[far] <= tol):
        raise ContainmentError("D0 is not contained in any ball tangent to the sphere at e1")
    s_prime = max(0.0, float(np.max((cnorm(X[far]) ** 2 - 1) / (2 * gap[far]), initial=0.0)))
    return ScaledDomain(D0, float(t), s_prime)


# --------------------------------------------------------------------------
# Convergence diagnostics
# --------------------------------------------------------------------------

def slab_grid(beta, n=2, step=0.15, radius=1.05):
    axes = [np.arange(beta, radius + 1e-12, step)] + [np.arange(-radius, radius + 1e-12, step)] * (2 * n - 1)
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2 * n)
    G = G[np.linalg.norm(G, axis=1) <= radius]
    return G[:, 0::2] + 1j * G[:, 1::2]


def _fd_derivatives(f, Z, h):
    """Central finite-difference gradient and Hessian of a real function on R^2n."""
    X = to_real(Z)
    dim = X.shape[1]
    E = np.eye(dim) * h

    def F(Y):
        return f(Y[:, 0::2] + 1j * Y[:, 1::2])

    f0 = F(X)
    grad = np.empty_like(X)
    hess = np.empty(X.shape + (dim,))
    plus = [F(X + E[i]) for i in range(dim)]
    minus = [F(X - E[i]) for i in range(dim)]
    for i in range(dim):
        grad[:, i] = (plus[i] - minus[i]) / (2 * h)
        hess[:, i, i] = (plus[i] - 2 * f0 + minus[i]) / h**2
        for j in range(i + 1, dim):
            pp = F(X + E[i] + E[j])
            mm = F(X - E[i] - E[j])
            pm = F(X + E[i] - E[j])
            mp = F(X - E[i] + E[j])
            hess[:, i, j] = hess[:, j, i] = (pp - pm - mp + mm) / (4 * h * h)
    return f0, grad, hess


def c2_gap(S, beta, step=0.15, h=1e-3):
    """max |g| + max |grad g| + max |hess g| for g = rho_t - (|z|^2 - 1) on the slab grid."""
    Z = slab_grid(beta, S.n, step)

    def g(W):
        return S.rho_t(W) - (cnorm(W) ** 2 - 1)

    v, grad, hess = _fd_derivatives(g, Z, h)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
        return np.inf
    return float(np.abs(v).max() + np.abs(grad).max() + np.abs(hess).max())


def _ray_boundary(S, U, rmax=3.0, coarse=96, iters=50):
    """First exit radius of S along rays from 0 in the directions U."""
    r = np.linspace(0.0, rmax, coarse + 1)[1:]
    inside = np.stack([S.rho_t(ri * U) < 0 for ri in r], axis=1)
    exit_idx = np.argmax(~inside, axis=1)
    never = inside.all(axis=1)
    hi = np.where(never, rmax, r[exit_idx])
    lo = np.where(exit_idx > 0, r[np.maximum(exit_idx - 1, 0)], 0.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ins = S.rho_t(mid[:, None] * U) < 0
        lo = np.where(ins, mid, lo)
        hi = np.where(ins, hi, mid)
    return 0.5 * (lo + hi)


def hausdorff_gap(S, m=2000, seed=0):
    """Sampled two-sided Hausdorff distance between the boundary of D_t and the unit sphere."""
    n = S.n
    if not S.rho_t(np.zeros(n)) < 0:
        raise ValueError("origin not inside the scaled domain")
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(m, 2 * n))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    Uc = U[:, 0::2] + 1j * U[:, 1::2]
    ray_pts = _ray_boundary(S, Uc)[:, None] * Uc
    pushed = S.boundary_samples(m, seed)
    pushed = pushed[np.all(np.isfinite(pushed), axis=-1)]
    cloud = np.vstack([ray_pts, pushed])
    to_sphere = np.abs(cnorm(cloud) - 1).max()
    dist, _ = cKDTree(to_real(cloud)).query(U)
    return float(max(to_sphere, dist.max()))


def convergence_report(S, beta, step=0.15, h=1e-3, m=2000):
    """(c2_gap, hausdorff_gap) of the scaled domain against the unit ball."""
    if not -1 < beta < 1:
        raise ValueError("beta must lie in (-1, 1)")
    return c2_gap(S, beta, step, h), hausdorff_gap(S, m)


# --------------------------------------------------------------------------
# Moebius length comparison and displacement estimates
# --------------------------------------------------------------------------

def _first_coordinate(curve):
    if isinstance(curve, PathPolyline):
        return curve.vertices[:, 0]
    c = np.asarray(curve, dtype=complex)
    return c if c.ndim == 1 else c[:, 0]


def mt_length_ratio(curve, t, beta):
    """(min, max) over vertex pairs of |d(s1) - d(s2)| / ((1 - t^2) |d~(s1) - d~(s2)|), d~ = m_t^{-1} o d.

    For Re d~ >= beta every ratio lies in [1/4, 1/min(1, 1 + beta)^2].
    """
    if not -1 < beta:
        raise ValueError("beta must exceed -1")
    delta = _first_coordinate(curve)
    tilde = mobius_apply(t, delta, "inverse")
    if np.any(tilde.real < beta - 1e-12):
        raise ValueError(f"m_t^-1 of the curve leaves the slab Re >= {beta}")
    i, j = np.triu_indices(len(delta), 1)
    num = np.abs(delta[i] - delta[j])
    den = (1 - t * t) * np.abs(tilde[i] - tilde[j])
    keep = den > 0
    if not np.any(keep):
        raise ValueError("curve has no distinct vertices")
    r = num[keep] / den[keep]
    return float(r.min()), float(r.max())


def mt_length_band(beta):
    return 0.25, 1.0 / min(1.0, 1.0 + beta) ** 2


def part2_constant(beta, eps):
    """C_beta(eps) bounding l(d) / ((1 + eps) Re(d(end) - d(start))) for d = m_t o d~.

    Assumes l(d~) <= (1 + eps) Re(d~(end) - d~(start)) and d~ within the
    slab Re >= beta with |Im d~| <= eps.
    """
    phi = np.arccos(1 / (1 + eps)) + 2 * np.arctan(eps / (1 + min(beta, 0.0)))
    if phi >= np.pi / 2:
        return np.inf
    return 4 * (1 + eps) / ((1 + min(beta, 0.0)) ** 2 * np.cos(phi))


def mt_part2_check(curve_tilde, t, beta, eps):
    """Evaluate both sides of l(d) <= C_beta(eps) (1 + eps) Re(d(end) - d(start)) for d = m_t o d~."""
    dt = _first_coordinate(curve_tilde)
    length_tilde = np.abs(np.diff(dt)).sum()
    gain_tilde = (dt[-1] - dt[0]).real
    if gain_tilde <= 0 or length_tilde > (1 + eps) * gain_tilde + 1e-12:
        raise ValueError("curve does not satisfy l <= (1 + eps) Re gain")
    if np.any(dt.real < beta) or np.any(np.abs(dt.imag) > eps):
        raise ValueError("curve leaves the slab or its Im excursion exceeds eps")
    d = mobius_apply(t, dt)
    lhs = np.abs(np.diff(d)).sum()
    C = part2_constant(beta, eps)
    rhs = C * (1 + eps) * (d[-1] - d[0]).real
    return {"length": float(lhs), "bound": float(rhs), "constant": float(C), "holds": bool(lhs <= rhs)}


def at_displacement_ratio(x, y, t, geodesic_context, comparability=0.1, tol=1e-8):
    """|A_t(y) - A_t(x)| / (sqrt(1 - t^2) |y - x|) for points on the range of a complex geodesic."""
    x = as_cvector(x)
    y = as_cvector(y)
    sep = cnorm(y - x)
    if sep == 0:
        raise ValueError("x = y: displacement ratio undefined")
    if x[0].real < 0 or y[0].real < 0:
        raise ValueError("need Re x1 >= 0 and Re y1 >= 0")
    for pt in (x, y):
        _, resid = geodesic_context.preimage(pt)
        if resid > tol * max(1.0, cnorm(pt)):
            raise ValueError("point is not on the range of the geodesic disc")
    if cnorm(y[1:] - x[1:]) < comparability * sep:
        raise ValueError("tangential comparability |y' - x'| ~ |y - x| fails")
    disp = cnorm(ball_aut_apply(t, y) - ball_aut_apply(t, x))
    return float(disp / (np.sqrt(1 - t * t) * sep))


# --------------------------------------------------------------------------
# Moebius telescope
# --------------------------------------------------------------------------

@dataclass
class TelescopeReport:
    breakpoints: np.ndarray
    residuals: np.ndarray
    lengths: np.ndarray
    gains: np.ndarray
    c_hat: np.ndarray
    im_flags: np.ndarray
    quotient: float
    total_gain: float
    constants: dict
    partial: bool = False

    def rows(self):
        s = np.concatenate([[0.0], self.breakpoints])
        ends = np.concatenate([self.breakpoints, [self.constants["s_end"]]])
        return [
            {
                "segment": k,
                "s_start": float(s[k]),
                "s_end": float(ends[k]),
                "length": float(self.lengths[k]),
                "re_gain": float(self.gains[k]),
                "c_hat": float(self.c_hat[k]),
                "im_flag": bool(self.im_flags[k]),
            }
            for k in range(len(self.lengths))
        ]


def _interp(marks, values, s):
    return np.interp(s, marks, values.real) + 1j * np.interp(s, marks, values.imag)


def mobius_telescope(curve, epsilon=0.05, t=0.5, normal=None, tol=1e-10, max_segments=200):
    """Split a curve at the parameters where Re m^{-j}(d(s)) = 0 (m = m_t, d = first coordinate).

    Per segment: Euclidean length of d, Re gain, the constant
    length / ((1 + eps) gain) and whether |Im m^{-j} o d| exceeds eps there.
    The quotient is normal length over endpoint separation.
    """
    if not isinstance(curve, PathPolyline):
        curve = PathPolyline(curve)
    V = curve.vertices
    marks = curve.marks
    n = V.shape[1]
    nvec = basis_vector(0, n) if normal is None else as_cvector(normal, n) / cnorm(normal)
    delta = V @ np.conj(nvec)
    if abs(delta[0].real) > 1e-8 or delta[-1].real <= 0:
        raise ValueError("first coordinate must start with Re = 0 and end with Re > 0")

    def level(j, s):
        return mobius_iterate(_interp(marks, delta, s), j, t, "inverse").real

    breaks, resid = [], []
    s_prev = marks[0]
    partial = False
    for j in range(1, max_segments + 1):
        if level(j, marks[-1]) <= 0:
            break
        vals = mobius_iterate(delta, j, t, "inverse").real
        cand = np.nonzero((marks > s_prev) & (vals > 0))[0]
        k = cand[0]
        lo = max(marks[k - 1], s_prev) if k > 0 else s_prev
        hi = marks[k]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if level(j, mid) > 0:
                hi = mid
            else:
                lo = mid
        s_j = 0.5 * (lo + hi)
        breaks.append(s_j)
        resid.append(abs(level(j, s_j)))
        s_prev = s_j
    else:
        partial = True

    edges = np.concatenate([[marks[0]], breaks, [marks[-1]]])
    lengths, gains, chat, flags = [], [], [], []
    for j in range(len(edges) - 1):
        a, b = edges[j], edges[j + 1]
        inner = marks[(marks > a) & (marks < b)]
        s = np.concatenate([[a], inner, [b]])
        d = _interp(marks, delta, s)
        L = np.abs(np.diff(d)).sum()
        g = (d[-1] - d[0]).real
        lengths.append(L)
        gains.append(g)
        chat.append(L / ((1 + epsilon) * g) if g > 0 else np.inf)
        pulled = mobius_iterate(d, j, t, "inverse")
        flags.append(bool(np.abs(pulled.imag).max() > epsilon))
    normal_len = np.abs(np.diff(delta)).sum()
    quotient = normal_len / cnorm(V[-1] - V[0])
    return TelescopeReport(
        breakpoints=np.asarray(breaks),
        residuals=np.asarray(resid),
        lengths=np.asarray(lengths),
        gains=np.asarray(gains),
        c_hat=np.asarray(chat),
        im_flags=np.asarray(flags),
        quotient=float(quotient),
        total_gain=float((delta[-1] - delta[0]).real),
        constants={"t": t, "epsilon": epsilon, "tol": tol, "s_end": float(marks[-1])},
        partial=partial,
    )
