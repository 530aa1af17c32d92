"""Real polynomials in the real coordinates of C^n with exact derivatives.

A polynomial is stored as an exponent table ``E`` (terms x 2n) and a
coefficient vector.  Coordinates are ordered (Re z1, Im z1, Re z2, ...).
``CPoly`` is a small complex-coefficient algebra used only to build
defining functions from holomorphic expressions.
"""
from __future__ import annotations

from collections import defaultdict
from itertools import product
from math import comb

import numpy as np


class CPoly:
    """Polynomial in real variables x_0..x_{m-1} with complex coefficients."""

    def __init__(self, nvars, terms=None):
        self.nvars = nvars
        self.terms = defaultdict(complex)
        for e, c in (terms or {}).items():
            if c != 0:
                self.terms[tuple(e)] += c

    @classmethod
    def const(cls, nvars, c):
        return cls(nvars, {(0,) * nvars: complex(c)})

    @classmethod
    def var(cls, nvars, j):
        e = [0] * nvars
        e[j] = 1
        return cls(nvars, {tuple(e): 1.0})

    @classmethod
    def z(cls, n, j):
        """The holomorphic coordinate z_j = x_{2j} + i x_{2j+1}."""
        return cls.var(2 * n, 2 * j) + 1j * cls.var(2 * n, 2 * j + 1)

    def _coerce(self, other):
        if isinstance(other, CPoly):
            return other
        return CPoly.const(self.nvars, other)

    def __add__(self, other):
        other = self._coerce(other)
        out = CPoly(self.nvars, dict(self.terms))
        for e, c in other.terms.items():
            out.terms[e] += c
        return out

    __radd__ = __add__

    def __neg__(self):
        return CPoly(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out = CPoly(self.nvars)
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                out.terms[tuple(a + b for a, b in zip(e1, e2))] += c1 * c2
        return out

    __rmul__ = __mul__

    def __pow__(self, k):
        out = CPoly.const(self.nvars, 1.0)
        for _ in range(k):
            out = out * self
        return out

    def conj(self):
        return CPoly(self.nvars, {e: np.conj(c) for e, c in self.terms.items()})

    def abs2(self):
        return self * self.conj()

    def real(self):
        return RealPolynomial.from_terms(self.nvars, {e: c.real for e, c in self.terms.items()})


class RealPolynomial:
    """Real polynomial with vectorised value, gradient and Hessian."""

    def __init__(self, exponents, coeffs):
        E = np.asarray(exponents, dtype=int)
        c = np.asarray(coeffs, dtype=float)
        keep = c != 0
        self.E = E[keep].reshape(-1, E.shape[1])
        self.c = c[keep]
        self.nvars = E.shape[1]
        self._grad = [self._derive(self.E, self.c, j) for j in range(self.nvars)]
        self._hess = [[self._derive(Ej, cj, k) for k in range(self.nvars)] for Ej, cj in self._grad]

    @classmethod
    def from_terms(cls, nvars, terms):
        items = [(e, c) for e, c in terms.items() if abs(c) > 0]
        if not items:
            return cls(np.zeros((1, nvars), dtype=int), [0.0])
        E, c = zip(*items)
        return cls(np.array(E), np.array(c))

    @staticmethod
    def _derive(E, c, j):
        mask = E[:, j] > 0
        E2 = E[mask].copy()
        c2 = c[mask] * E2[:, j]
        E2[:, j] -= 1
        return E2, c2

    @property
    def degree(self):
        return int(self.E.sum(axis=1).max()) if len(self.c) else 0

    @staticmethod
    def _eval(E, c, x):
        if len(c) == 0:
            return np.zeros(x.shape[:-1])
        mon = np.prod(x[..., None, :] ** E, axis=-1)
        return mon @ c

    def value(self, x):
        return self._eval(self.E, self.c, np.asarray(x, dtype=float))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([self._eval(E, c, x) for E, c in self._grad], axis=-1)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        rows = [np.stack([self._eval(E, c, x) for E, c in row], axis=-1) for row in self._hess]
        return np.stack(rows, axis=-2)

    def shifted(self, x0):
        """The polynomial h -> p(x0 + h), expanded exactly by the binomial theorem."""
        x0 = np.asarray(x0, dtype=float)
        terms = defaultdict(float)
        for e, c in zip(self.E, self.c):
            parts = [[(k, comb(int(ej), k) * x0[j] ** (ej - k)) for k in range(int(ej) + 1)] for j, ej in enumerate(e)]
            for combo in product(*parts):
                terms[tuple(k for k, _ in combo)] += c * np.prod([w for _, w in combo])
        return RealPolynomial.from_terms(self.nvars, dict(terms))

    def value_complexified(self, x):
        """Evaluate at complex real-coordinates (used for polarisation)."""
        x = np.asarray(x, dtype=complex)
        return np.prod(x[..., None, :] ** self.E, axis=-1) @ self.c

    def to_json(self):
        return {"exponents": self.E.tolist(), "coeffs": self.c.tolist()}

    @classmethod
    def from_json(cls, data):
        return cls(np.array(data["exponents"], dtype=int), np.array(data["coeffs"], dtype=float))
