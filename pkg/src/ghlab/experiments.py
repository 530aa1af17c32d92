"""Point families, sweeps and summary statistics shared by the CLI and the acceptance suite."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy import stats

from .complex_core import as_cvector, cnorm
from .domains import get_domain, project_boundary
from .kobayashi import estimate_kr_metric, gh_ratio, metric_or_inf


def complex_tangent(nvec):
    """Unit vector Hermitian-orthogonal to nvec (n = 2: (-conj n2, conj n1))."""
    nvec = as_cvector(nvec)
    if len(nvec) == 2:
        v = np.array([-np.conj(nvec[1]), np.conj(nvec[0])])
    else:
        from .domains import complex_tangent_basis

        v = complex_tangent_basis(nvec)[:, 0]
    return v / cnorm(v)


def interior_samples(D, k, rng, scale=0.6):
    """k interior points drawn around the domain centre."""
    out = []
    while len(out) < k:
        z = D.center + scale * D.bounding_radius * (rng.normal(size=D.n) + 1j * rng.normal(size=D.n)) / 2
        if D.contains(z):
            out.append(as_cvector(z))
    return out


def metric_samples(D, k, rng):
    """k (z, X) pairs with z inside D and X a random direction."""
    return [(z, rng.normal(size=D.n) + 1j * rng.normal(size=D.n)) for z in interior_samples(D, k, rng)]


def pair_family(D, regime, delta, count, rng, separation=0.1, threshold=0.1):
    """``count`` pairs (z, w) at boundary distance about ``delta``.

    tangential: z = p - delta n_p and w = q - delta n_q with q the boundary
    point below z + s v, v complex tangent; s is halved until the tangency
    ratio |(z - w)_z| / |z - w| falls below ``threshold``.
    normal: same construction along u = c (i n) + sqrt(1 - c^2) v with the
    cosine c drawn from [2 threshold, 1], so both points sit at depth delta
    and the displacement has a complex-normal part of at least ``threshold``.
    mixed: each pair draws one of the two.
    """
    S = D.boundary_samples(4000, seed=int(rng.integers(2**31)))
    out = []
    while len(out) < count:
        p = S[rng.integers(len(S))]
        fp = project_boundary(D, p)
        n, v = fp.n_z, complex_tangent(fp.n_z)
        v = v * np.exp(2j * np.pi * rng.uniform())
        z = fp.pi_z - delta * n
        kind = regime if regime != "mixed" else ("tangential", "normal")[int(rng.integers(2))]
        if kind == "tangential":
            u = v
        else:
            c = rng.uniform(min(1.0, 2 * threshold), 1.0)
            u = c * rng.choice([-1, 1]) * 1j * n + np.sqrt(1 - c * c) * v
        s = separation
        for _ in range(30):
            q = project_boundary(D, fp.pi_z + s * u).pi_z
            w = q - delta * project_boundary(D, q).n_z
            tang = cnorm(np.vdot(n, z - w) * n) / cnorm(z - w)
            ok = tang < threshold if kind == "tangential" else tang >= threshold
            if ok and D.contains(w):
                break
            s *= 0.5
        else:
            continue
        out.append((z, w, kind))
    return out


def _gh_job(args):
    cid, z, w, kw = args
    return gh_ratio(get_domain(cid), z, w, **kw)


def run_pairs(cid, pairs, workers=1, **kw):
    """gh_ratio over pairs of a catalog domain; results in input order."""
    jobs = [(cid, z, w, kw) for z, w in pairs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_gh_job, jobs))
    return [_gh_job(j) for j in jobs]


def metric_rows(D, samples, d=8, m=64):
    rows = []
    for i, (z, X) in enumerate(samples):
        br = estimate_kr_metric(D, z, X, d=d, m=m, return_disc=False)
        oracle = float(metric_or_inf(D, z, X))
        row = {"index": i, "domain": D.catalog_id, "lower": br.lower, "upper": br.upper, "width": br.width,
               "oracle": oracle, "converged": br.converged}
        for j in range(D.n):
            row[f"z{j + 1}_re"], row[f"z{j + 1}_im"] = z[j].real, z[j].imag
            row[f"X{j + 1}_re"], row[f"X{j + 1}_im"] = X[j].real, X[j].imag
        rows.append(row)
    return rows


def trend_test(deltas, ratios, level=0.95):
    """OLS slope of ratio against log(1/delta) with its two-sided CI and the fitted constant.

    Returns dict(slope, ci_low, ci_high, C_hat) with C_hat = max ratio.
    """
    x = np.log(1 / np.asarray(deltas, dtype=float))
    y = np.asarray(ratios, dtype=float)
    res = stats.linregress(x, y)
    q = stats.t.ppf(0.5 + level / 2, len(x) - 2)
    return {
        "slope": float(res.slope),
        "ci_low": float(res.slope - q * res.stderr),
        "ci_high": float(res.slope + q * res.stderr),
        "C_hat": float(y.max()),
    }


def scatter_svg(xs, ys, path, xlabel="delta", ylabel="ratio", logx=True, title=""):
    """Standalone SVG scatter plot (no external renderer)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    W, H, pad = 480, 320, 50
    xv = np.log10(xs) if logx else xs
    if len(xv) == 0:
        xv, ys = np.array([0.0]), np.array([0.0])
    x0, x1 = xv.min(), xv.max()
    y0, y1 = min(ys.min(), 1.0), ys.max()
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (W - 2 * pad)

    def py(y):
        return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">'
        f'{"log10 " if logx else ""}{xlabel}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">{ylabel}</text>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{pad}" y="{H - pad + 14}" font-size="10">{x0:.3g}</text>',
        f'<text x="{W - pad}" y="{H - pad + 14}" font-size="10" text-anchor="end">{x1:.3g}</text>',
        f'<text x="{pad - 4}" y="{H - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
    ]
    for x, y in zip(xv, ys):
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="steelblue" fill-opacity="0.7"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
