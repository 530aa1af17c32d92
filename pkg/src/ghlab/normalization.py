"""Fridman-Ma normalisation of a boundary point.

A 2-jet of a defining function at 0 is stored as (ell, Q, H) with

    rho(z) = 2 Re(ell . z) + Re(z^T Q z) + z^T H conj(z) + O(|z|^3),

Q complex symmetric and H Hermitian.  The classical coefficient names are
exposed as properties of ``Jet2``:

    a_ij = Q_ij (i, j >= 2)      b_1 = Q_11 / 2,  b_j = Q_1j
    c_j  = 2 H_1j                d   = H_11,      N_j = H_jj

Maps are holomorphic ``MapStage`` objects with closed-form inverses and exact
second-order jets at 0, composed into a ``PipelineMap``.  Jets are carried
through the pipeline by the chain rule; ``numerical_jet`` re-expands
rho o F^{-1} by Cauchy integrals as an independent check.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .complex_core import as_cvector, cnorm, to_real
from .domains import complex_derivatives, complex_tangent_basis, eval_rho, levi_min_eig

LAMBDA = 1.0 / 8.0
EPS_STEP3 = 0.95
VIII_FACTOR = 14.0 / 15.0


class NormalizationError(RuntimeError):
    def __init__(self, msg, stage=None):
        prefix = "" if stage is None else f"stage {stage}: "
        super().__init__(prefix + msg)
        self.stage = stage


# --------------------------------------------------------------------------
# Jets
# --------------------------------------------------------------------------

@dataclass
class Jet2:
    ell: np.ndarray
    Q: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.ell = np.asarray(self.ell, dtype=complex)
        self.Q = np.asarray(self.Q, dtype=complex)
        self.H = np.asarray(self.H, dtype=complex)

    @property
    def n(self):
        return len(self.ell)

    @property
    def a(self):
        return self.Q[1:, 1:]

    @property
    def b(self):
        b = self.Q[0].copy()
        b[0] = self.Q[0, 0] / 2
        return b

    @property
    def c(self):
        return 2 * self.H[0, 1:]

    @property
    def d(self):
        return float(self.H[0, 0].real)

    @property
    def Nj(self):
        return np.real(np.diag(self.H)[1:])

    @property
    def M(self):
        return float(self.Nj.max()) if self.n > 1 else 0.0

    @property
    def scale(self):
        return float(self.ell[0].real)

    def summary(self):
        return {
            "scale": self.scale,
            "d": self.d,
            "Nj": self.Nj.tolist(),
            "max_abs_a": float(np.abs(self.a).max()) if self.n > 1 else 0.0,
            "max_abs_b": float(np.abs(self.b).max()),
            "max_abs_c": float(np.abs(self.c).max()) if self.n > 1 else 0.0,
        }

    def distance(self, other):
        """Max entrywise discrepancy, relative to max(1, size of the block)."""
        out = 0.0
        for u, v in ((self.ell, other.ell), (self.Q, other.Q), (self.H, other.H)):
            out = max(out, float(np.max(np.abs(u - v)) / max(1.0, np.abs(v).max())))
        return out


def model_jet(n, d=1.0, N=1.0, a=None):
    """Jet of 2 Re z1 + Re sum a_ij z_i z_j + d |z1|^2 + N |z'|^2."""
    Q = np.zeros((n, n), dtype=complex)
    if a is not None:
        Q[1:, 1:] = a
    H = np.diag([d] + [N] * (n - 1)).astype(complex)
    ell = np.zeros(n, dtype=complex)
    ell[0] = 1
    return Jet2(ell, Q, H)


def renormalize(jet, tol=1e-9):
    """Positive-factor renormalisation: ell -> e1 and no z1^2 term.

    Multiplying rho by the positive function c (1 + 2 Re(mu z1)) leaves the
    domain unchanged; mu is chosen to cancel Re(Q_11 z1^2).
    """
    l0 = jet.ell[0]
    if abs(l0.imag) > tol * abs(l0) or l0.real <= 0 or np.any(np.abs(jet.ell[1:]) > tol * abs(l0)):
        raise NormalizationError(f"linear term not aligned with 2 Re z1: {jet.ell}")
    s = l0.real
    ell = np.zeros_like(jet.ell)
    ell[0] = 1
    Q = jet.Q / s
    H = jet.H / s
    mu = -Q[0, 0] / 2
    H = H.copy()
    H[0, 0] += 2 * mu.real
    Q = Q.copy()
    Q[0, 0] = 0
    return Jet2(ell, 0.5 * (Q + Q.T), 0.5 * (H + H.conj().T))


def pullback_jet(jet, J, K):
    """Jet of rho o G where G(w) = J w + (1/2) K(w, w) + O(3)."""
    ell = J.T @ jet.ell
    Q = J.T @ jet.Q @ J + np.einsum("k,kij->ij", jet.ell, K)
    H = J.T @ jet.H @ J.conj()
    return Jet2(ell, Q, H)


def inverse_jet(A, T):
    """2-jet (J, K) at 0 of the inverse of F(z) = A z + (1/2) T(z, z)."""
    J = np.linalg.inv(A)
    K = -np.einsum("kl,lab,ai,bj->kij", J, T, J, J)
    return J, K


# --------------------------------------------------------------------------
# Map stages
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MapStage:
    """One holomorphic map with an exact inverse.

    kinds: ``translation`` (p), ``linear`` (A), ``ball_aut_B`` (eps),
    ``quadratic_shear`` (b, B):  z1 -> z1 + z1 sum_j b_j z_j + z'^T B z'.
    """

    kind: str
    params: dict
    label: str = ""

    # construction helpers
    @classmethod
    def translation(cls, p, label="i) T_p"):
        return cls("translation", {"p": as_cvector(p)}, label)

    @classmethod
    def linear(cls, A, label):
        return cls("linear", {"A": np.asarray(A, dtype=complex)}, label)

    @classmethod
    def ball_aut_B(cls, eps, label):
        if not 0 < eps < 2:
            raise ValueError("Phi_4^eps needs 0 < eps < 2")
        return cls("ball_aut_B", {"eps": float(eps)}, label)

    @classmethod
    def quadratic_shear(cls, n, b=None, B=None, label=""):
        b = np.zeros(n, dtype=complex) if b is None else np.asarray(b, dtype=complex)
        B = np.zeros((n - 1, n - 1), dtype=complex) if B is None else np.asarray(B, dtype=complex)
        return cls("quadratic_shear", {"b": b, "B": 0.5 * (B + B.T)}, label)

    def _phi4(self):
        eps = self.params["eps"]
        return eps, 2 - eps, 1 - eps, np.sqrt(eps * (2 - eps))

    def forward(self, z):
        z = as_cvector(z)
        k = self.kind
        if k == "translation":
            return z - self.params["p"]
        if k == "linear":
            return z @ self.params["A"].T
        if k == "ball_aut_B":
            eps, a, bb, r = self._phi4()
            den = a + bb * z[..., 0]
            out = np.empty_like(z)
            out[..., 0] = eps * z[..., 0] / den
            out[..., 1:] = r * z[..., 1:] / den[..., None]
            return out
        if k == "quadratic_shear":
            b, B = self.params["b"], self.params["B"]
            zp = z[..., 1:]
            out = z.copy()
            out[..., 0] = z[..., 0] * (1 + z @ b) + ((zp @ B) * zp).sum(axis=-1)
            return out
        raise ValueError(k)

    def inverse(self, w):
        w = as_cvector(w)
        k = self.kind
        if k == "translation":
            return w + self.params["p"]
        if k == "linear":
            return w @ np.linalg.inv(self.params["A"]).T
        if k == "ball_aut_B":
            eps, a, bb, r = self._phi4()
            den = eps - bb * w[..., 0]
            out = np.empty_like(w)
            out[..., 0] = a * w[..., 0] / den
            out[..., 1:] = r * w[..., 1:] / den[..., None]
            return out
        if k == "quadratic_shear":
            b, B = self.params["b"], self.params["B"]
            wp = w[..., 1:]
            rhs = w[..., 0] - ((wp @ B) * wp).sum(axis=-1)
            lin = 1 + wp @ b[1:]
            out = w.copy()
            if b[0] == 0:
                out[..., 0] = rhs / lin
            else:
                # b1 z1^2 + lin z1 - rhs = 0; take the root continuous with the identity
                disc = np.sqrt(lin**2 + 4 * b[0] * rhs)
                r1 = 2 * rhs / (lin + disc)
                r2 = -(lin + disc) / (2 * b[0])
                out[..., 0] = np.where(np.abs(r1 - w[..., 0]) <= np.abs(r2 - w[..., 0]), r1, r2)
            return out
        raise ValueError(k)

    def jacobian(self, z):
        z = as_cvector(z)
        n = z.shape[-1]
        eye = np.broadcast_to(np.eye(n, dtype=complex), z.shape[:-1] + (n, n)).copy()
        k = self.kind
        if k == "translation":
            return eye
        if k == "linear":
            return np.broadcast_to(self.params["A"], z.shape[:-1] + (n, n)).copy()
        if k == "ball_aut_B":
            eps, a, bb, r = self._phi4()
            den = a + bb * z[..., 0]
            J = np.zeros_like(eye)
            J[..., 0, 0] = eps * a / den**2
            for j in range(1, n):
                J[..., j, 0] = -r * bb * z[..., j] / den**2
                J[..., j, j] = r / den
            return J
        if k == "quadratic_shear":
            b, B = self.params["b"], self.params["B"]
            J = eye
            J[..., 0, 0] = 1 + z @ b + b[0] * z[..., 0]
            J[..., 0, 1:] = b[1:] * z[..., :1] + 2 * z[..., 1:] @ B
            return J
        raise ValueError(k)

    def jet_at_zero(self, n):
        """(A, T): F(z) = A z + (1/2) T(z, z) + O(3) for origin-fixing stages."""
        k = self.kind
        T = np.zeros((n, n, n), dtype=complex)
        if k == "linear":
            return self.params["A"], T
        if k == "ball_aut_B":
            eps, a, bb, r = self._phi4()
            s = eps / a
            kap = bb / a
            A = np.diag([s] + [np.sqrt(s)] * (n - 1)).astype(complex)
            T[0, 0, 0] = -2 * s * kap
            for j in range(1, n):
                T[j, 0, j] = T[j, j, 0] = -np.sqrt(s) * kap
            return A, T
        if k == "quadratic_shear":
            b, B = self.params["b"], self.params["B"]
            T[0, 0, 0] = 2 * b[0]
            T[0, 0, 1:] = b[1:]
            T[0, 1:, 0] = b[1:]
            T[0, 1:, 1:] = 2 * B
            return np.eye(n, dtype=complex), T
        raise ValueError(f"stage {k} does not fix the origin")

    def transport(self, jet):
        """Jet of rho o stage^{-1}, renormalised."""
        A, T = self.jet_at_zero(jet.n)
        J, K = inverse_jet(A, T)
        return renormalize(pullback_jet(jet, J, K))


@dataclass
class PipelineMap:
    stages: list = field(default_factory=list)
    jets: list = field(default_factory=list)

    def __call__(self, z):
        z = as_cvector(z)
        for s in self.stages:
            z = s.forward(z)
        return z

    def inverse(self, w):
        w = as_cvector(w)
        for s in reversed(self.stages):
            w = s.inverse(w)
        return w

    def jacobian(self, z):
        z = as_cvector(z)
        n = z.shape[-1]
        J = np.broadcast_to(np.eye(n, dtype=complex), z.shape[:-1] + (n, n)).copy()
        for s in self.stages:
            J = s.jacobian(z) @ J
            z = s.forward(z)
        return J

    def prefix(self, k):
        return PipelineMap(self.stages[:k], self.jets[:k])

    def then(self, other):
        return PipelineMap(self.stages + other.stages, self.jets + other.jets)

    def labels(self):
        return [s.label for s in self.stages]

    def __len__(self):
        return len(self.stages)


# --------------------------------------------------------------------------
# Certification of type C(N, k)
# --------------------------------------------------------------------------

def takagi_values(a):
    """Takagi values of a complex symmetric matrix (its singular values)."""
    a = np.asarray(a, dtype=complex)
    if a.size == 0:
        return np.zeros(0)
    return np.linalg.svd(a, compute_uv=False)


def certify_CNk(jet, N, k, tol=1e-9):
    """Check the C(N, k) normal form; returns (pass, margin).

    margin = (N - 4 - k/2) - max_{|z'|=1} |z'^T a z'|.
    """
    if int(N) != N or N < 4:
        raise ValueError(f"N must be an integer >= 4, got {N}")
    if int(k) != k or not 0 <= k <= 2 * (N - 4):
        raise ValueError(f"k must be an integer in [0, {2 * (N - 4)}], got {k}")
    bound = N - 4 - k / 2
    top = takagi_values(jet.a).max(initial=0.0)
    margin = bound - top
    scale = max(1.0, N, abs(jet.d))
    form_ok = (
        abs(jet.ell[0] - 1) < tol
        and np.all(np.abs(jet.ell[1:]) < tol)
        and np.all(np.abs(jet.b) < tol * scale)
        and np.all(np.abs(jet.c) < tol * scale)
        and np.all(np.abs(jet.Nj - N) < tol * scale)
        and np.all(np.abs(jet.H[1:, 1:] - np.diag(np.diag(jet.H[1:, 1:]))) < tol * scale)
    )
    ok = bool(form_ok and jet.d > 1 and margin >= -tol * max(1.0, bound))
    return ok, float(margin)


# --------------------------------------------------------------------------
# The five steps
# --------------------------------------------------------------------------

def _real_tangent_min_curvature(D, p):
    _, g, H = eval_rho(D, p)
    q, _ = np.linalg.qr(np.column_stack([g, np.eye(len(g))]))
    T = q[:, 1:]
    return np.linalg.eigvalsh(T.T @ H @ T).min() / np.linalg.norm(g)


def touching_radius(D, p, m=4000, floor=1.0):
    """Radius R >= 1 of a ball tangent at p (inner side) that contains D.

    sup over boundary samples x of |x - p|^2 / (2 <p - x, n_p>), also bounded
    below by the minimal normal curvature radius at p.
    """
    from .domains import outward_normal

    nvec = outward_normal(D, p)
    X = D.boundary_samples(m, seed=11)
    h = np.real(np.sum((p - X) * np.conj(nvec), axis=-1))
    dist2 = cnorm(X - p) ** 2
    far = dist2 > 1e-12
    if np.any(h[far] <= 0):
        raise NormalizationError("p is not a point of global strong convexity", stage=1)
    R = np.max(dist2[far] / (2 * h[far]))
    kmin = _real_tangent_min_curvature(D, p)
    if kmin <= 0:
        raise NormalizationError("boundary not strongly convex at p", stage=1)
    return float(max(floor, R, 1.0 / kmin))


def extract_jet2(D, p, R=None):
    return fm_step1(D, p, R=R)[1]


def fm_step1(D, p, R=None, levi_tol=1e-12):
    """Translation, unitary frame diagonalising the tangential Hermitian block, dilation."""
    p = as_cvector(p, D.n)
    if levi_min_eig(D, p) <= levi_tol:
        raise NormalizationError("Levi form not positive at p", stage=1)
    n = D.n
    _, l, Q, H = complex_derivatives(D, p)
    lbar = np.conj(l) / np.linalg.norm(l)
    V = complex_tangent_basis(lbar)
    S = V.T @ H @ V.conj()
    _, U = np.linalg.eigh(0.5 * (S + S.conj().T))
    V = V @ U.conj()
    Ah = np.column_stack([lbar, V])
    A = Ah.conj().T
    R = touching_radius(D, p) if R is None else R
    stages = [
        MapStage.translation(p),
        MapStage.linear(A, "ii) A(p)"),
        MapStage.linear(np.eye(n) / R, "ii') dilation 1/R"),
    ]
    raw = Jet2(l, Q, H)
    j1 = renormalize(pullback_jet(raw, Ah, np.zeros((n, n, n))))
    j2 = stages[2].transport(j1)
    return PipelineMap(stages, [None, j1, j2]), j2


def choose_eps(jet, lam=LAMBDA):
    return float(min(0.5, lam / (2 * np.sum(np.abs(jet.b)) + 1e-12)))


def choose_N(M):
    return int(np.floor(max(8 * M, 4.0))) + 1


def fm_step2(jet, N=None):
    """Phi_2 .. Phi_6: reach type C(N, 0)."""
    if jet.d <= 0:
        raise NormalizationError(f"need d > 0 after step 1, got {jet.d}", stage=2)
    n = jet.n
    stages, jets = [], []

    def push(stage):
        nonlocal jet
        jet = stage.transport(jet)
        stages.append(stage)
        jets.append(jet)

    A2 = np.eye(n, dtype=complex)
    A2[1:, 0] = jet.c / (2 * jet.Nj)
    push(MapStage.linear(A2, "iii) Phi_2"))
    M = jet.M
    t = np.sqrt(jet.Nj / M)
    push(MapStage.linear(np.diag(np.concatenate([[1.0], t])), "iv) Phi_3"))
    push(MapStage.ball_aut_B(choose_eps(jet), "v) Phi_4^eps"))
    push(MapStage.quadratic_shear(n, b=jet.b, label="Phi_5"))
    N = choose_N(M) if N is None else N
    push(MapStage.linear(np.eye(n) * (M / N), "Phi_6 = (M/N) z"))
    ok, margin = certify_CNk(jet, N, 0)
    if not ok:
        raise NormalizationError(
            f"C({N},0) certificate failed: margin={margin:.3g}, d={jet.d:.3g}, Nj={jet.Nj}", stage=2
        )
    return PipelineMap(stages, jets), jet, N


def fm_step3(jet, N, k, eps=EPS_STEP3):
    """vi) shear, vii) Phi_4^eps, viii) parabolic contraction: C(N,k) -> C(N,k+1)."""
    if N < 5 or not 0 <= k <= 2 * (N - 4) - 1:
        raise ValueError(f"step 3 needs N >= 5 and 0 <= k <= 2(N-4)-1 (N={N}, k={k})")
    ok, margin = certify_CNk(jet, N, k)
    if not ok:
        raise NormalizationError(f"input jet is not of type C({N},{k}) (margin {margin:.3g})", stage=3)
    n = jet.n
    Bq = jet.a / (4 * (N - 4 - k / 2))
    stages = [
        MapStage.quadratic_shear(n, B=Bq, label=f"vi) shear k={k}"),
        MapStage.ball_aut_B(eps, f"vii) Phi_4^eps k={k}"),
        MapStage.linear(np.diag([VIII_FACTOR] + [np.sqrt(VIII_FACTOR)] * (n - 1)), f"viii) k={k}"),
    ]
    jets = []
    for s in stages:
        jet = s.transport(jet)
        jets.append(jet)
    ok, margin = certify_CNk(jet, N, k + 1)
    if not ok:
        raise NormalizationError(f"output not of type C({N},{k + 1}) (margin {margin:.3g})", stage=3)
    return PipelineMap(stages, jets), jet


def fm_step5(jet, N):
    n = jet.n
    d = jet.d
    stage = MapStage.linear(np.diag([d] + [np.sqrt(d * N)] * (n - 1)), "ix) final dilation")
    out = stage.transport(jet)
    return PipelineMap([stage], [out]), out


def containment_radius(D, F, m=4000):
    """Smallest r >= 1 with sampled F(boundary of D) inside the ball rB."""
    W = F(D.boundary_samples(m, seed=5))
    ok = np.all(np.isfinite(W), axis=-1)
    W = W[ok]
    num = cnorm(W) ** 2
    den = -2 * W[:, 0].real
    tiny = num < 1e-20
    if np.any((den <= 0) & ~tiny):
        return np.inf
    ratio = np.where(tiny, 0.0, num / np.where(den > 0, den, 1.0))
    return float(max(1.0, ratio.max()))


@dataclass
class Normalization:
    F: PipelineMap
    jet: Jet2
    r: float
    N: int

    def __iter__(self):
        return iter((self.F, self.jet, self.r))


def fm_normalize(D, p, N=None, R=None, eps=EPS_STEP3, measure_r=True):
    """Full construction F_p; returns (F_p, final jet, r) (plus N on the object)."""
    F, jet = fm_step1(D, p, R=R)
    try:
        F2, jet, N = fm_step2(jet, N=N)
    except NormalizationError as err:
        raise NormalizationError(str(err), stage=err.stage) from err
    F = F.then(F2)
    for k in range(2 * (N - 4)):
        F3, jet = fm_step3(jet, N, k, eps=eps)
        F = F.then(F3)
    F5, jet = fm_step5(jet, N)
    F = F.then(F5)
    r = containment_radius(D, F) if measure_r else np.nan
    return Normalization(F, jet, r, N)


# --------------------------------------------------------------------------
# Independent jet re-expansion by Cauchy integrals
# --------------------------------------------------------------------------

def numerical_jet(D, G, radius=1e-2, m=16, base=None):
    """2-jet at 0 of rho o G for a holomorphic G, without derivatives of G.

    With ``base`` given, G returns offsets from that point and rho is
    re-expanded about it first, which avoids cancellation near the boundary.

    rho is polarised to P(z, zeta) with P(z, conj z) = rho(z); then
    f(w, omega) = P(G(w), conj(G(conj(omega)))) is holomorphic and its Taylor
    coefficients are read off from 2-D FFTs on the torus of the given radius.
    """
    n = D.n
    poly = D.rho.poly if base is None else D.rho.poly.shifted(to_real(as_cvector(base, n)))

    def f(W, Om):
        Z = G(W)
        Zeta = np.conj(G(np.conj(Om)))
        X = np.empty(Z.shape[:-1] + (2 * n,), dtype=complex)
        X[..., 0::2] = (Z + Zeta) / 2
        X[..., 1::2] = (Z - Zeta) / 2j
        return poly.value_complexified(X)

    th = 2 * np.pi * np.arange(m) / m
    U, V = np.meshgrid(radius * np.exp(1j * th), radius * np.exp(1j * th), indexing="ij")

    def coeffs(i, j):
        """FFT coefficients a_pq of f restricted to variables i, j of (w, omega)."""
        Y = np.zeros(U.shape + (2 * n,), dtype=complex)
        Y[..., i] += U
        Y[..., j] += V
        vals = f(Y[..., :n], Y[..., n:])
        c = np.fft.fft2(vals) / m**2
        return c

    ell = np.zeros(n, dtype=complex)
    Q = np.zeros((n, n), dtype=complex)
    H = np.zeros((n, n), dtype=complex)
    r = radius
    # f = l.w + conj(l).omega + w^T Q w / 2 + omega^T conj(Q) omega / 2 + w^T H omega + O(3)
    for i in range(n):
        for j in range(i + 1, n):
            Q[i, j] = Q[j, i] = coeffs(i, j)[1, 1] / r**2
        for j in range(n):
            c = coeffs(i, n + j)
            H[i, j] = c[1, 1] / r**2
            if j == 0:
                ell[i] = c[1, 0] / r
                Q[i, i] = 2 * c[2, 0] / r**2
    return Jet2(ell, Q, H)


def numerical_stage_jets(D, F):
    """Renormalised numerical jets of rho o (prefix of F)^{-1} for each stage after ii)."""
    if F.stages[0].kind != "translation":
        raise ValueError("pipeline must start with a translation")
    p = F.stages[0].params["p"]
    out = []
    for k in range(2, len(F) + 1):
        stages = F.stages[1:k]
        radius = cauchy_radius(stages, D.n)
        out.append(renormalize(numerical_jet(D, PipelineMap(stages).inverse, radius=radius, base=p)))
    return out


def cauchy_radius(stages, n, target=0.1):
    """Torus radius keeping every intermediate coordinate of the inverse chain within ``target``."""
    lin = np.eye(n, dtype=complex)
    worst = 1.0
    for s in reversed(stages):
        A = s.params["A"] if s.kind == "linear" else s.jet_at_zero(n)[0]
        lin = np.linalg.solve(A, lin)
        worst = max(worst, np.linalg.norm(lin, 2))
    return target / worst


# --------------------------------------------------------------------------
# Axis alignment
# --------------------------------------------------------------------------

@dataclass
class AxisAlignment:
    q: np.ndarray
    image: np.ndarray
    residual: float
    iterations: int
    normalization: Normalization


def _boundary_chart(D, p0):
    """x in R^{2n-1} -> boundary point near p0 (tangent offset, then along the normal)."""
    from .domains import outward_normal

    n0 = outward_normal(D, p0)
    g = to_real(n0)
    q, _ = np.linalg.qr(np.column_stack([g, np.eye(len(g))]))
    T = q[:, 1:]
    n0r = g / np.linalg.norm(g)

    def chart(x):
        base = to_real(p0) + T @ x
        s = 0.0
        poly = D.rho.poly
        for _ in range(50):
            y = base + s * n0r
            v = poly.value(y)
            if abs(v) < 1e-15:
                break
            s -= v / (poly.gradient(y) @ n0r)
        from .complex_core import to_complex

        return to_complex(base + s * n0r)

    return chart


def align_axis(D, z, p0, tol=1e-10, max_iter=40, N=None, R=None):
    """Find q on the boundary near p0 with F_q(z) on the negative real z1-axis.

    N and the step-1 dilation are frozen at their values for p0 so that F_q
    depends continuously on q; the residual (Im F_q(z)_1, F_q(z)') is driven
    to zero by damped Newton with a finite-difference Jacobian.
    """
    z = as_cvector(z, D.n)
    p0 = as_cvector(p0, D.n)
    base = fm_normalize(D, p0, N=N, R=R, measure_r=False)
    N, R = base.N, touching_radius(D, p0) if R is None else R
    chart = _boundary_chart(D, p0)
    from .domains import project_boundary

    q_start = project_boundary(D, z).pi_z
    x = _chart_coords(D, p0, q_start)

    def resid(x):
        q = chart(x)
        Fq = fm_normalize(D, q, N=N, R=R, measure_r=False)
        w = Fq.F(z)
        return np.concatenate([[w[0].imag], to_real(w[1:])]), q, Fq, w

    r, q, Fq, w = resid(x)
    rn = np.linalg.norm(r)
    it = 0
    for it in range(1, max_iter + 1):
        if rn < tol:
            break
        h = 1e-7 * max(1.0, np.linalg.norm(x))
        Jm = np.empty((len(r), len(x)))
        for j in range(len(x)):
            e = np.zeros(len(x))
            e[j] = h
            Jm[:, j] = (resid(x + e)[0] - resid(x - e)[0]) / (2 * h)
        step = np.linalg.lstsq(Jm, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-4:
            cand = resid(x + lam * step)
            if np.linalg.norm(cand[0]) < rn:
                break
            lam *= 0.5
        else:
            raise NormalizationError(f"axis alignment stalled, residual {rn:.3e}")
        x = x + lam * step
        r, q, Fq, w = cand
        rn = np.linalg.norm(r)
    if rn >= max(tol, 1e-8):
        raise NormalizationError(f"axis alignment did not converge, residual {rn:.3e}")
    if not -1 < w[0].real < 0:
        raise NormalizationError(f"Re F_q(z)_1 = {w[0].real:.3g} outside (-1, 0); z too far from p0")
    return AxisAlignment(q, w, float(rn), it, Fq)


def _chart_coords(D, p0, q):
    from .domains import outward_normal

    g = to_real(outward_normal(D, p0))
    qq, _ = np.linalg.qr(np.column_stack([g, np.eye(len(g))]))
    T = qq[:, 1:]
    return T.T @ (to_real(q) - to_real(p0))
