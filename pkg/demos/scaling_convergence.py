"""Scaled domains D_t converging to the ball as t -> 1.

Run:  python demos/scaling_convergence.py
"""
# %% imports
import numpy as np

from ghlab.domains import get_domain
from ghlab.scaling import c2_gap, hausdorff_gap, lempert_scale, mobius_telescope, normalized_domain

D0 = normalized_domain(get_domain("ellipsoid_1_4"), np.array([1.0, 0]))

# %% C^2 gap on the slab Re z1 >= beta and Hausdorff gap of the boundary
print(f"{'t':>6s} {'c2_gap(-0.5)':>14s} {'hausdorff':>12s}")
for t in (0.5, 0.9, 0.99, 0.999):
    S = lempert_scale(D0, t)
    print(f"{t:6g} {c2_gap(S, -0.5):14.4e} {hausdorff_gap(S, m=500):12.4e}")

# %% telescope along the first axis: pieces between level sets of the Moebius iterates
V = np.zeros((65, 2), dtype=complex)
V[:, 0] = np.linspace(0, 0.99, 65)
rep = mobius_telescope(V, t=0.5)
print(f"{len(rep.lengths)} segments, quotient {rep.quotient:.4f}")
for row in rep.rows()[:5]:
    print("  ", {k: round(v, 5) if isinstance(v, float) else v for k, v in row.items()})
