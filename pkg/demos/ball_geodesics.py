"""Kobayashi geometry of the unit ball, solver against closed forms.

Run:  python demos/ball_geodesics.py
"""
# %% imports
import numpy as np

from ghlab.complex_core import ball_kob_distance, ball_kr_metric, ball_real_geodesic, cnorm
from ghlab.domains import unit_ball
from ghlab.kobayashi import estimate_kr_metric, euclid_length, quasi_geodesic

B = unit_ball()
rng = np.random.default_rng(0)

# %% metric brackets from extremal discs
z = np.array([0.6, 0.2j])
for X in (np.array([1.0, 0]), np.array([0, 1.0]), np.array([1.0, 1j])):
    br = estimate_kr_metric(B, z, X)
    print(f"X = {X}:  [{br.lower:.6f}, {br.upper:.6f}]  closed form {float(ball_kr_metric(z, X)):.6f}")

# %% two points at depth 1e-3 separated along i * n: the geodesic bows inward
delta, theta = 1e-3, 0.1
z = (1 - delta) * np.array([1.0, 0])
w = (1 - delta) * np.array([np.exp(1j * theta), 0])
path = quasi_geodesic(B, z, w)
exact = ball_real_geodesic(z, w)
print(f"Kobayashi length {path.meta['length']:.6f}  vs distance {float(ball_kob_distance(z, w)):.6f}")
print(f"Euclidean ratio  {euclid_length(path) / cnorm(w - z):.4f}  (exact geodesic "
      f"{euclid_length(exact) / cnorm(w - z):.4f}, ball bound {np.pi / 2:.4f})")
print(f"deepest vertex at |z| = {cnorm(path.vertices).min():.4f}")
