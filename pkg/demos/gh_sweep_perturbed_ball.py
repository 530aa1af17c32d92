"""Gehring-Hayman ratios on the perturbed ball, by regime and depth.

Run:  python demos/gh_sweep_perturbed_ball.py [--pairs 4] [--svg out.svg]
"""
# %% imports
import argparse

import numpy as np

from ghlab.domains import get_domain
from ghlab.experiments import pair_family, run_pairs, scatter_svg, trend_test

ap = argparse.ArgumentParser()
ap.add_argument("--pairs", type=int, default=4)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--svg", default=None)
args = ap.parse_args()

D = get_domain("perturbed_ball")
rng = np.random.default_rng(args.seed)
deltas = [1e-1, 1e-2, 1e-3, 1e-4]

# %% sweep
xs, ys = [], []
for regime in ("tangential", "normal"):
    ds, pairs = [], []
    for delta in deltas:
        fam = pair_family(D, regime, delta, args.pairs, rng)
        pairs += [(z, w) for z, w, _ in fam]
        ds += [delta] * len(fam)
    ratios = np.array([r.ratio for r in run_pairs(D.catalog_id, pairs)])
    ds = np.array(ds)
    means = [ratios[ds == d].mean() for d in deltas]
    fit = trend_test(ds, ratios)
    print(f"{regime:>10s}: mean ratio by delta " + "  ".join(f"{m:.3f}" for m in means)
          + f"   slope {fit['slope']:+.4f}  C_hat {fit['C_hat']:.4f}")
    xs += list(ds)
    ys += list(ratios)

# %% the normal-regime means rise from 1 and level off below pi/2 as delta / |z - w| -> 0
if args.svg:
    scatter_svg(xs, ys, args.svg, "delta", "l / |z - w|", title="perturbed ball")
    print("wrote", args.svg)
