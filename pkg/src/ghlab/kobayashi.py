"""Kobayashi-Royden metric estimates, Kobayashi length and quasi-geodesics.

``estimate_kr_metric`` brackets kappa_D(z; X) from both sides:

* upper: the largest analytic disc phi(l) = N(l) / (1 + beta l) with
  phi(0) = z, phi'(0) = r X / |X| found by SLSQP under boundary constraints
  rho(phi(e^{i theta_k})) <= 0, then certified on a dense circle after a
  small radial shrink.  kappa <= |X| / r.
* lower: kappa of balls containing D (the tangent ball at the closest
  boundary point and an enclosing ball), by monotonicity under inclusion.

Quasi-geodesics come from Dijkstra on a local grid graph with Kobayashi edge
weights, followed by L-BFGS descent of the discrete Kobayashi length.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .complex_core import (
    AnalyticDisc,
    OutsideBallError,
    PathPolyline,
    as_cvector,
    ball_kr_metric,
    cnorm,
    to_complex,
    to_real,
)
from .domains import (
    ProjectionError,
    euclid_length,
    normal_component,
    normal_length,
    project_boundary,
)


class GridDisconnectedError(RuntimeError):
    def __init__(self, msg, required_h):
        super().__init__(f"{msg}; try grid spacing h <= {required_h:.3g}")
        self.required_h = required_h


# --------------------------------------------------------------------------
# Defining-function access shared by polynomial and mapped domains
# --------------------------------------------------------------------------

def _value_and_cgrad(D, Z, h=1e-7):
    """rho and its complex gradient l = (rho_x - i rho_y)/2 at points Z."""
    Z = as_cvector(Z)
    rho = getattr(D, "rho", None)
    if rho is not None and hasattr(rho, "poly"):
        X = to_real(Z)
        v = rho.poly.value(X)
        g = rho.poly.gradient(X)
    else:
        X = to_real(Z)
        v = D.value(Z)
        g = np.empty(X.shape)
        for k in range(X.shape[-1]):
            e = np.zeros(X.shape[-1])
            e[k] = h
            g[..., k] = (D.value(to_complex(X + e)) - D.value(to_complex(X - e))) / (2 * h)
    return v, 0.5 * (g[..., 0::2] - 1j * g[..., 1::2])


def metric_or_inf(D, Z, V):
    """Exact Kobayashi-Royden metric where available; +inf outside the domain."""
    Z = as_cvector(Z)
    V = np.broadcast_to(np.asarray(V, dtype=complex), Z.shape)
    chart = getattr(D, "chart", None)
    with np.errstate(all="ignore"):
        if chart is not None:
            if hasattr(chart, "frame"):
                W, Y, ok = chart.frame(Z, V)
            else:
                W, Y, ok = chart.to_ball(Z), chart.push(Z, V), True
            q = 1 - (W.real**2 + W.imag**2).sum(axis=-1)
            ip = (Y * W.conj()).sum(axis=-1)
            val = np.sqrt((Y.real**2 + Y.imag**2).sum(axis=-1) / q + (ip.real**2 + ip.imag**2) / q**2)
            inside = (q > 0) & ok
            return np.where(inside, val, np.inf)
        out = np.full(Z.shape[:-1], np.inf)
        inside = D.contains(Z)
        if np.any(inside):
            try:
                out[inside] = D.kr_metric(Z[inside], V[inside])
            except (OutsideBallError, ValueError, np.linalg.LinAlgError):
                for idx in zip(*np.nonzero(inside)):
                    try:
                        out[idx] = D.kr_metric(Z[idx], V[idx])
                    except (OutsideBallError, ValueError, np.linalg.LinAlgError):
                        pass
        return out


# --------------------------------------------------------------------------
# Metric bracket
# --------------------------------------------------------------------------

@dataclass
class MetricBracket:
    lower: float
    upper: float
    converged: bool = True
    disc: AnalyticDisc = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lower > self.upper * (1 + 1e-9):
            raise ValueError(f"inconsistent bracket: lower {self.lower} > upper {self.upper}")

    @property
    def width(self):
        return (self.upper - self.lower) / self.upper

    def contains(self, value, rel=0.0):
        return self.lower * (1 - rel) <= value <= self.upper * (1 + rel)


def _pack_len(n, d):
    return 3 + 2 * n * (d - 1)


def _disc_coeffs(x, z, Xh, n, d):
    r = x[0]
    beta = x[1] + 1j * x[2]
    C = np.zeros((d + 1, n), dtype=complex)
    C[0] = z
    C[1] = r * Xh + beta * z
    if d >= 2:
        rest = x[3:].reshape(d - 1, n, 2)
        C[2:] = rest[..., 0] + 1j * rest[..., 1]
    return C, beta


def _disc_eval(C, beta, lam):
    powers = lam[:, None] ** np.arange(len(C))
    den = 1 + beta * lam
    return (powers @ C) / den[:, None], powers, den


def _disc_constraints(value, cgrad, z, Xh, n, d, lam):
    """SLSQP constraint -value(phi(lam_k)) >= 0 with its analytic Jacobian.

    ``cgrad`` returns the complex gradient l, so that d value = 2 Re(l . d phi).
    """

    def fun(x):
        C, beta = _disc_coeffs(x, z, Xh, n, d)
        phi, _, _ = _disc_eval(C, beta, lam)
        v = value(phi)
        return -np.where(np.isfinite(v), v, 1e6)

    def jac(x):
        C, beta = _disc_coeffs(x, z, Xh, n, d)
        phi, powers, den = _disc_eval(C, beta, lam)
        ell = cgrad(phi)
        m = len(lam)
        J = np.zeros((m, len(x)))
        # r
        dphi = (lam / den)[:, None] * Xh
        J[:, 0] = 2 * np.real(np.sum(ell * dphi, axis=1))
        # beta (through c1 = r Xh + beta z and through the denominator)
        dphi = (lam / den)[:, None] * (z - phi)
        w = np.sum(ell * dphi, axis=1)
        J[:, 1] = 2 * w.real
        J[:, 2] = -2 * w.imag
        col = 3
        for k in range(2, d + 1):
            base = powers[:, k] / den
            for j in range(n):
                w = ell[:, j] * base
                J[:, col] = 2 * w.real
                J[:, col + 1] = -2 * w.imag
                col += 2
        return -J

    return fun, jac


def _max_on_disc(D, disc, cage, m_dense=1024, radii=(0.25, 0.5, 0.75, 0.9, 1.0)):
    """Largest defining-function value on a dense sample of the disc (inf if it leaves ``cage``)."""
    th = 2 * np.pi * np.arange(m_dense) / m_dense
    lam = np.concatenate([r * np.exp(1j * th[:: (1 if r == 1.0 else 8)]) for r in radii])
    phi = disc(lam)
    c, R = cage
    if np.any(cnorm(phi - c) > R):
        return np.inf
    v = D.value(phi)
    return float(np.max(np.where(np.isfinite(v), v, np.inf)))


def _inscribed_affine(D, z, Xh, diameter, m=64, iters=50):
    """Largest r with z + r lam Xh inside D on sampled circles (r below ``diameter``)."""
    lam = np.exp(2j * np.pi * np.arange(m) / m)
    lam = np.concatenate([0.5 * lam, lam])
    lo, hi = 0.0, diameter
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.all(D.value(z + mid * lam[:, None] * Xh) < 0):
            lo = mid
        else:
            hi = mid
    return lo


def _enclosing_ball(D, m=4000, iters=2000):
    key = ("enclosing", m)
    cache = getattr(D, "_cache", None)
    if cache is not None and key in cache:
        return cache[key]
    X = D.boundary_samples(m, seed=17)
    X = X[np.all(np.isfinite(X), axis=-1)]
    c = X.mean(axis=0)
    for i in range(iters):
        far = X[np.argmax(cnorm(X - c))]
        c = c + (far - c) / (i + 2)
    R = float(cnorm(X - c).max()) * (1 + 1e-3)
    if cache is not None:
        cache[key] = (c, R)
    return c, R


def _tangent_ball(D, z):
    """Ball tangent at the closest boundary point of z that contains D (sampled)."""
    from .normalization import touching_radius

    frame = project_boundary(D, z)
    R = touching_radius(D, frame.pi_z, floor=0.0) * (1 + 1e-6)
    return frame.pi_z - R * frame.n_z, R


def lower_bound(D, z, X):
    """kappa of the tightest available comparison ball containing D."""
    vals = []
    candidates = [_enclosing_ball(D)]
    if hasattr(getattr(D, "rho", None), "poly"):
        try:
            candidates.append(_tangent_ball(D, z))
        except (ProjectionError, RuntimeError, np.linalg.LinAlgError):
            pass
    for c, R in candidates:
        try:
            vals.append(float(ball_kr_metric((z - c) / R, np.asarray(X) / R)))
        except OutsideBallError:
            pass
    return max(vals) if vals else 0.0


def _certify(D, x, z, Xh, n, d, m, shrink, cage):
    """Largest s <= shrink with phi(s * lambda) inside D on a dense sample; (s * r, disc, s) or None."""
    C, beta = _disc_coeffs(x, z, Xh, n, d)
    if abs(beta) >= 1 or x[0] <= 0:
        return None
    disc = AnalyticDisc(C, pole=beta, m=m)
    s = shrink
    if _max_on_disc(D, lambda l: disc(s * l), cage) >= 0:
        lo_s, hi_s = 0.0, s
        for _ in range(40):
            mid = 0.5 * (lo_s + hi_s)
            if _max_on_disc(D, lambda l: disc(mid * l), cage) < 0:
                lo_s = mid
            else:
                hi_s = mid
        s = lo_s
    if s <= 0:
        return None
    return s * x[0], disc, s, x


def _solve_disc(D, z, Xh, d, m, x0, cage, shrink, maxiter, restarts, scale):
    """SLSQP over discs constrained at m boundary nodes, then certification of the best candidates."""
    n = D.n
    c = cage[0]
    lam = np.exp(2j * np.pi * np.arange(m) / m)
    fun, jac = _disc_constraints(D.value, lambda P: _value_and_cgrad(D, P)[1], z, Xh, n, d, lam)
    bfun, bjac = _disc_constraints(lambda P: cnorm(P - c) ** 2 - cage[1] ** 2, lambda P: np.conj(P - c),
                                   z, Xh, n, d, lam)
    cons = [
        {"type": "ineq", "fun": fun, "jac": jac},
        {"type": "ineq", "fun": bfun, "jac": bjac},
        {"type": "ineq", "fun": lambda x: 0.98 - x[1] ** 2 - x[2] ** 2,
         "jac": lambda x: np.concatenate([[0.0, -2 * x[1], -2 * x[2]], np.zeros(len(x) - 3)])},
    ]

    def obj(x):
        return -x[0] / scale

    def obj_jac(x):
        g = np.zeros_like(x)
        g[0] = -1 / scale
        return g

    # Cauchy estimates for a disc inside the cage bound every coefficient
    bounds = [(0.0, 2.1 * cage[1]), (-1.0, 1.0), (-1.0, 1.0)] + [(-4 * cage[1], 4 * cage[1])] * (len(x0) - 3)
    feasible = [x0]

    def track(x):
        if x[0] > feasible[-1][0] and fun(x).min() >= -1e-6:
            feasible.append(np.array(x))

    start = x0
    for attempt in range(restarts + 1):
        with warnings.catch_warnings():
            # SLSQP clips trial points to the bounds and warns about it
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(obj, start, jac=obj_jac, constraints=cons, method="SLSQP", bounds=bounds,
                           callback=track, options={"maxiter": maxiter, "ftol": 1e-12})
        if res.success and fun(res.x).min() >= -1e-9:
            break
        # warm restart from the best nearly feasible iterate, pulled slightly inward
        start = feasible[-1].copy()
        start[0] *= 0.99
    best = None
    for x in [res.x] + feasible[::-1][:3]:
        cand = _certify(D, x, z, Xh, n, d, m, shrink, cage)
        if cand is not None and (best is None or cand[0] > best[0]):
            best = cand
    return best, res


def estimate_kr_metric(D, z, X, d=8, m=64, shrink=0.9995, maxiter=300, restarts=2, return_disc=True,
                       refine_below=0.99):
    """Two-sided bracket of the Kobayashi-Royden metric kappa_D(z; X).

    When certification has to shrink the optimal disc below ``refine_below``
    (boundary peaks between the m constraint nodes, typical for poles near
    the unit circle) the problem is solved again with 4m nodes from that disc.
    """
    z = as_cvector(z, D.n)
    X = np.asarray(X, dtype=complex)
    nX = float(cnorm(X))
    if nX == 0:
        raise ValueError("X must be nonzero")
    if not np.all(D.value(z) < 0):
        raise ValueError("z must be an interior point")
    n = D.n
    Xh = X / nX
    # keep the disc inside a ball enclosing D: mapped domains may have spurious
    # negative regions of their defining function far from D
    c, R = _enclosing_ball(D)
    cage = (c, 1.05 * R)
    r0 = _inscribed_affine(D, z, Xh, 2 * R)
    x0 = np.zeros(_pack_len(n, d))
    x0[0] = 0.999 * r0
    scale = max(r0, 1e-12)
    best, res = _solve_disc(D, z, Xh, d, m, x0, cage, shrink, maxiter, restarts, scale)
    if best is not None and best[2] < refine_below:
        start = best[3].copy()
        start[0] *= best[2]
        fine, res_f = _solve_disc(D, z, Xh, d, 4 * m, start, cage, shrink, maxiter, restarts, scale)
        if fine is not None and fine[0] > best[0]:
            best, res = fine, res_f
    if best is None:
        raise RuntimeError("no feasible disc found")
    r_cert, disc, s, _ = best
    shrunk = AnalyticDisc(disc.coeffs * (s ** np.arange(len(disc.coeffs)))[:, None], pole=disc.pole * s, m=m)
    upper = nX / r_cert
    lower = min(lower_bound(D, z, X), upper)
    return MetricBracket(lower, upper, bool(res.success), shrunk if return_disc else None,
                         {"r": r_cert, "shrink": s, "iterations": int(res.nit), "inscribed": r0})


# --------------------------------------------------------------------------
# Kobayashi length
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _gauss(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1), 0.5 * w


def segment_lengths(D, A, B, q=4, metric=None):
    """Gauss-Legendre Kobayashi length of the straight segments A[i] -> B[i]."""
    A = as_cvector(A)
    B = as_cvector(B)
    s, w = _gauss(q)
    P = A[..., None, :] + s[:, None] * (B - A)[..., None, :]
    V = np.broadcast_to((B - A)[..., None, :], P.shape)
    met = metric_or_inf(D, P, V) if metric is None else metric(P, V)
    return met @ w


def segment_lengths_adaptive(D, A, B, rtol=1e-9, max_depth=40, metric=None):
    """Kobayashi length of straight segments by adaptive Gauss-Legendre bisection.

    A piece is accepted when its 8- and 16-node values agree to ``rtol``;
    otherwise it is halved.  Handles the 1/delta growth of the metric near
    the boundary that defeats a fixed rule.
    """
    A = np.atleast_2d(as_cvector(A))
    B = np.atleast_2d(as_cvector(B))
    total = np.zeros(len(A))
    owner = np.arange(len(A))
    a, b = A, B
    for depth in range(max_depth + 1):
        g8 = segment_lengths(D, a, b, 8, metric)
        g16 = segment_lengths(D, a, b, 16, metric)
        ok = ~np.isfinite(g16)
        with np.errstate(invalid="ignore"):
            ok |= np.abs(g16 - g8) <= rtol * np.abs(g16) + 1e-15
        if depth == max_depth:
            ok[:] = True
        np.add.at(total, owner[ok], g16[ok])
        if ok.all():
            break
        a, b, owner = a[~ok], b[~ok], owner[~ok]
        mid = 0.5 * (a + b)
        a, b, owner = np.concatenate([a, mid]), np.concatenate([mid, b]), np.concatenate([owner, owner])
    return total


def kob_length(D, path, n=None, metric=None, rtol=1e-9, check_inside=True):
    """Kobayashi length of a polyline.

    With ``n`` each segment uses an n-node Gauss-Legendre rule; by default
    the rule is adaptive (see segment_lengths_adaptive).  ``metric(P, V)``
    replaces the chart metric, e.g. by ``estimated_metric(D)``.
    """
    V = path.vertices if isinstance(path, PathPolyline) else as_cvector(path)
    if len(V) < 2:
        return 0.0
    if check_inside and not np.all(D.contains(V)):
        raise ValueError("path exits the domain")
    if n is None:
        seg = segment_lengths_adaptive(D, V[:-1], V[1:], rtol, metric=metric)
    else:
        seg = segment_lengths(D, V[:-1], V[1:], n, metric)
    if not np.all(np.isfinite(seg)):
        raise ValueError("path exits the domain")
    return float(seg.sum())


def estimated_metric(D, d=8, m=64):
    """Metric callable backed by the upper value of estimate_kr_metric (slow; per point)."""

    def metric(P, V):
        P = as_cvector(P)
        out = np.empty(P.shape[:-1])
        flatP = P.reshape(-1, P.shape[-1])
        flatV = np.broadcast_to(V, P.shape).reshape(-1, P.shape[-1])
        vals = []
        for z, X in zip(flatP, flatV):
            if not D.contains(z) or cnorm(X) == 0:
                vals.append(np.inf if cnorm(X) > 0 else 0.0)
                continue
            vals.append(estimate_kr_metric(D, z, X, d=d, m=m, return_disc=False).upper)
        out[...] = np.asarray(vals).reshape(out.shape)
        return out

    return metric


# --------------------------------------------------------------------------
# Quasi-geodesics
# --------------------------------------------------------------------------

_OFFSETS = None


def _half_stencil(dim):
    global _OFFSETS
    if _OFFSETS is None or _OFFSETS.shape[1] != dim:
        grids = np.stack(np.meshgrid(*([[-1, 0, 1]] * dim), indexing="ij"), -1).reshape(-1, dim)
        keep = []
        for o in grids:
            nz = np.nonzero(o)[0]
            if len(nz) and o[nz[0]] > 0:
                keep.append(o)
        _OFFSETS = np.array(keep)
    return _OFFSETS


def _frame(D, z, w):
    """Real orthonormal frame (u, iu, inward normal, rest) adapted to the pair."""
    L = cnorm(w - z)
    u = (w - z) / L
    mid = 0.5 * (z + w)
    _, ell = _value_and_cgrad(D, mid)
    g = to_real(np.conj(ell))
    if np.linalg.norm(g) == 0:
        g = np.ones_like(g)
    cols = [to_real(u), to_real(1j * u), -g]
    cols += list(np.eye(len(g)))
    Q, _ = np.linalg.qr(np.column_stack(cols))
    Q = Q[:, : len(g)]
    # keep the sign conventions of the first three directions
    for k, c in enumerate(cols[:3]):
        if Q[:, k] @ c < 0:
            Q[:, k] = -Q[:, k]
    return Q, L


def _build_graph(D, z, w, shape, box, q):
    Q, L = _frame(D, z, w)
    dim = Q.shape[0]
    axes = [np.linspace(lo * L, hi * L, k) for (lo, hi), k in zip(box, shape)]
    # pad remaining real directions (n > 2) with a single layer
    while len(axes) < dim:
        axes.append(np.array([0.0]))
    G = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    shp = G.shape[:-1]
    P = to_real(z) + G.reshape(-1, dim) @ Q.T
    Pc = to_complex(P)
    valid = D.contains(Pc)
    idx = np.arange(len(P)).reshape(shp)
    offs = _half_stencil(len(shp))
    src, dst = [], []
    for o in offs:
        sl_a = tuple(slice(max(0, -k), s - max(0, k)) for k, s in zip(o, shp))
        sl_b = tuple(slice(max(0, k), s - max(0, -k)) for k, s in zip(o, shp))
        a = idx[sl_a].ravel()
        b = idx[sl_b].ravel()
        keep = valid[a] & valid[b]
        src.append(a[keep])
        dst.append(b[keep])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    wts = segment_lengths(D, Pc[src], Pc[dst], q)
    spacing = max(np.diff(ax).max() if len(ax) > 1 else 0.0 for ax in axes[: len(shape)])
    return Pc, valid, src, dst, wts, spacing


def _connect(D, point, Pc, valid, radius):
    cand = np.nonzero(valid & (cnorm(Pc - point) <= radius))[0]
    if len(cand) == 0:
        return cand, np.zeros(0)
    wts = segment_lengths_adaptive(D, np.broadcast_to(point, Pc[cand].shape), Pc[cand], rtol=1e-6)
    ok = np.isfinite(wts)
    return cand[ok], wts[ok]


def _cumulative(D, V, q=None):
    seg = segment_lengths(D, V[:-1], V[1:], q) if q else segment_lengths_adaptive(D, V[:-1], V[1:])
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_equal_length(D, V, K, q=8, sub=16):
    """Resample a polyline to K vertices equally spaced in Kobayashi arclength.

    Each segment is first split into ``sub`` pieces so that arclength is
    close to linear in the parameter within a piece.
    """
    V = _densify(V, sub)
    cum = _cumulative(D, V, q)
    targets = np.linspace(0, cum[-1], K)
    out = np.empty((K, V.shape[1]), dtype=complex)
    j = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(V) - 2)
    frac = np.where(cum[j + 1] > cum[j], (targets - cum[j]) / np.maximum(cum[j + 1] - cum[j], 1e-300), 0.0)
    out[:] = V[j] + frac[:, None] * (V[j + 1] - V[j])
    out[0], out[-1] = V[0], V[-1]
    return out


def _descend(D, V, q, maxiter=200, h=1e-7):
    """L-BFGS on interior vertices of the discrete Kobayashi length.

    Each vertex moves in units of its local Euclidean spacing, which tracks
    the metric's length scale on an equal-length resampled path (near the
    boundary it is orders of magnitude smaller than in the middle).
    """
    K, n = V.shape
    z, w = V[0], V[-1]
    dim = 2 * n
    gaps = cnorm(np.diff(V, axis=0))
    sigma = np.maximum(0.5 * (gaps[:-1] + gaps[1:]), 1e-12)
    sig = np.repeat(sigma, dim)
    ref = to_real(V[1:-1]).ravel()

    def unpack(x):
        inner = to_complex((ref + sig * x).reshape(K - 2, dim))
        return np.vstack([z, inner, w])

    def fg(x):
        P = unpack(x)
        A, B = P[:-1], P[1:]
        seg = segment_lengths(D, A, B, q)
        f = seg.sum()
        if not np.isfinite(f):
            return 1e12, np.zeros_like(x)
        # all 4 * dim one-sided perturbations in a single batched evaluation
        Ar = to_real(A)
        Br = to_real(B)
        scale = np.maximum(cnorm(B - A), 1e-14)
        E = np.eye(dim)[:, None, :] * (h * scale)[None, :, None]
        Ap = to_complex(np.concatenate([Ar + E, Ar - E, np.broadcast_to(Ar, E.shape), np.broadcast_to(Ar, E.shape)]))
        Bp = to_complex(np.concatenate([np.broadcast_to(Br, E.shape), np.broadcast_to(Br, E.shape), Br + E, Br - E]))
        F = segment_lengths(D, Ap, Bp, q).reshape(4, dim, K - 1)
        da = ((F[0] - F[1]) / (2 * h * scale)).T
        db = ((F[2] - F[3]) / (2 * h * scale)).T
        grad = np.zeros((K, dim))
        grad[:-1] += np.where(np.isfinite(da), da, 0.0)
        grad[1:] += np.where(np.isfinite(db), db, 0.0)
        return f, grad[1:-1].ravel() * sig

    res = minimize(fg, np.zeros_like(ref), jac=True, method="L-BFGS-B", options={"maxiter": maxiter, "gtol": 1e-10})
    return unpack(res.x), float(res.fun), res


DEFAULT_SHAPE = (13, 9, 7, 5)
DEFAULT_BOX = ((-0.15, 1.15), (-0.4, 0.4), (-0.1, 0.8), (-0.3, 0.3))


def quasi_geodesic(D, z, w, shape=DEFAULT_SHAPE, box=DEFAULT_BOX, refine=1, K=24, q=8, maxiter=60):
    """(1 + eps)-quasi-geodesic from z to w: grid Dijkstra, then Kobayashi-length descent.

    ``shape`` and ``box`` define the local grid in the pair frame (box in
    units of |z - w|).  The returned path carries ``meta`` with the graph
    optimum, the final length and eps_gh = |length / graph_length - 1|.
    """
    z = as_cvector(z, D.n)
    w = as_cvector(w, D.n)
    if not (np.all(D.contains(z)) and np.all(D.contains(w))):
        raise ValueError("endpoints must be interior")
    if cnorm(w - z) == 0:
        return PathPolyline(np.vstack([z, w]), np.zeros(2), {"length": 0.0, "graph_length": 0.0, "eps_gh": 0.0})
    Pc, valid, src, dst, wts, spacing = _build_graph(D, z, w, shape, box, 3)
    radius = 1.75 * spacing
    cz, wz = _connect(D, z, Pc, valid, radius)
    cw, ww = _connect(D, w, Pc, valid, radius)
    N = len(Pc)
    iz, iw = N, N + 1
    direct = segment_lengths_adaptive(D, z[None], w[None])[0]
    rows = np.concatenate([src, np.full(len(cz), iz), np.full(len(cw), iw), [iz]])
    cols = np.concatenate([dst, cz, cw, [iw]])
    vals = np.concatenate([wts, wz, ww, [direct]])
    keep = np.isfinite(vals)
    G = coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(N + 2, N + 2)).tocsr()
    dist, pred = dijkstra(G, directed=False, indices=iz, return_predecessors=True)
    if not np.isfinite(dist[iw]):
        raise GridDisconnectedError("endpoints not connected in the grid graph", spacing / 2)
    order = [iw]
    while order[-1] != iz:
        order.append(pred[order[-1]])
    order = order[::-1]
    allP = np.vstack([Pc, z, w])
    V = allP[order]
    graph_cum = _cumulative(D, V)
    graph_len = float(graph_cum[-1])
    W = V
    # coarse passes with a cheap rule, then one pass with the full rule
    for rule in [4] * max(1, refine) + [q]:
        W = resample_equal_length(D, W, K)
        W, _, res = _descend(D, W, rule, maxiter=maxiter)
    cum = _cumulative(D, W)
    if cum[-1] <= graph_len:
        V = W
    else:
        # descent exploited quadrature error; the graph path is the better curve
        cum = graph_cum
    length = float(cum[-1])
    meta = {
        "graph_length": graph_len,
        "length": length,
        "eps_gh": abs(length / graph_len - 1),
        "grid_spacing": spacing,
        "converged": bool(res.success),
    }
    return PathPolyline(V, cum, meta)


# --------------------------------------------------------------------------
# Gehring-Hayman records and visibility statistics
# --------------------------------------------------------------------------

@dataclass
class GHRecord:
    z: np.ndarray
    w: np.ndarray
    separation: float
    delta_z: float
    delta_w: float
    tangency: float
    kob_length: float
    euclid_length: float
    normal_length: float
    ratio: float
    eps_gh: float
    path: PathPolyline = None

    def row(self):
        return {
            "separation": self.separation,
            "delta_z": self.delta_z,
            "delta_w": self.delta_w,
            "tangency": self.tangency,
            "kob_length": self.kob_length,
            "euclid_length": self.euclid_length,
            "normal_length": self.normal_length,
            "ratio": self.ratio,
            "eps_gh": self.eps_gh,
        }


def _frame_or_none(D, z):
    try:
        return project_boundary(D, z)
    except (ProjectionError, np.linalg.LinAlgError):
        return None


def gh_ratio(D, z, w, **kw):
    """Quasi-geodesic from z to w and its Euclidean length over |z - w|."""
    z = as_cvector(z, D.n)
    w = as_cvector(w, D.n)
    path = quasi_geodesic(D, z, w, **kw)
    sep = float(cnorm(w - z))
    fz = _frame_or_none(D, z)
    fw = _frame_or_none(D, w)
    l = euclid_length(path)
    ratio = l / sep
    if ratio < 1 - 1e-12:
        raise AssertionError("Euclidean length below chord length")
    tang = float(cnorm(normal_component(w - z, fz)) / sep) if fz is not None else np.nan
    return GHRecord(
        z, w, sep,
        fz.delta if fz else np.nan,
        fw.delta if fw else np.nan,
        tang,
        path.meta["length"],
        l,
        normal_length(path, fz) if fz else np.nan,
        max(ratio, 1.0),
        path.meta["eps_gh"],
        path,
    )


def _tangential_direction(frame):
    n = frame.n_z
    v = np.zeros_like(n)
    v[0], v[1] = -np.conj(n[1]), np.conj(n[0])
    return v / cnorm(v)


def normal_ray_profile(D, p, deltas):
    """kappa * sqrt(delta) along the inward normal ray at boundary point p.

    Returns (tangential, normal) products for complex-tangential and
    normal unit directions.
    """
    frame = project_boundary(D, as_cvector(p, D.n))
    n = frame.n_z
    v = _tangential_direction(frame)
    deltas = np.asarray(deltas, dtype=float)
    X = frame.pi_z - deltas[:, None] * n
    tang = metric_or_inf(D, X, v) * np.sqrt(deltas)
    norm = metric_or_inf(D, X, n) * np.sqrt(deltas)
    return tang, norm


def _densify(V, k):
    s = np.arange(k) / k
    inner = V[:-1, None, :] + s[None, :, None] * (V[1:] - V[:-1])[:, None, :]
    return np.vstack([inner.reshape(-1, V.shape[1]), V[-1:]])


def visibility_stats(D, pairs, deltas=np.logspace(-1, -4, 7), **kw):
    """Per-pair penetration depth, kappa * sqrt(delta) band constants and log upper-bound residual."""
    rows = []
    for i, (z, w) in enumerate(pairs):
        z = as_cvector(z, D.n)
        w = as_cvector(w, D.n)
        path = quasi_geodesic(D, z, w, **kw)
        depths = [f.delta for f in map(lambda v: _frame_or_none(D, v), _densify(path.vertices, 8)) if f]
        fz = project_boundary(D, z)
        fw = project_boundary(D, w)
        prof = []
        normal_min = np.inf
        for f in (fz, fw):
            tang, norm = normal_ray_profile(D, f.pi_z, deltas)
            prof.append(tang)
            normal_min = min(normal_min, float(norm.min()))
        prof = np.concatenate(prof)
        resid = path.meta["length"] - 0.5 * np.log(1 / fz.delta) - 0.5 * np.log(1 / fw.delta)
        rows.append({
            "index": i,
            "domain": getattr(D, "catalog_id", ""),
            "penetration_depth": float(max(depths)),
            "c_low": float(prof.min()),
            "c_high": float(prof.max()),
            "band_ratio": float(prof.max() / prof.min()),
            "c_low_normal": normal_min,
            "log_residual": float(resid),
            "violation": bool(prof.max() / prof.min() > 4),
        })
    return rows
