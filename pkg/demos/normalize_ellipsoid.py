"""Normalizing the 2-jet of an ellipsoid boundary point to the sphere model.

Run:  python demos/normalize_ellipsoid.py
"""
# %% imports
import numpy as np

from ghlab.domains import get_domain
from ghlab.normalization import extract_jet2, fm_normalize, numerical_stage_jets

D = get_domain("ellipsoid_1_2")
p = np.array([0, 2**-0.5], dtype=complex)

# %% raw jet at p, then the composed map and its final jet
print("raw jet:", extract_jet2(D, p).summary())
norm = fm_normalize(D, p)
print(f"{len(norm.F)} stages, ladder N = {norm.N}, containment r = {norm.r:.4g}")
print("final jet:", norm.jet.summary())

# %% bookkeeping check: transported jets vs Cauchy-integral re-expansion
numeric = numerical_stage_jets(D, norm.F)
errs = [j.distance(num) for j, num in zip(norm.F.jets[1:], numeric)]
for stage, e in list(zip(norm.F.stages[1:], errs))[:8]:
    print(f"  {stage.label:<28s} {e:.2e}")
print(f"worst stage discrepancy {max(errs):.2e}")

# %% the map sends p to the origin and is invertible near p
Z = p + 0.01 * np.array([[1, 1j], [-1j, 0.5]])
print("F(p) =", norm.F(p), "  round trip", np.abs(norm.F.inverse(norm.F(Z)) - Z).max())
