"""Pure-numpy per-voxel kernels; reference implementation for the compiled ones.

All functions take float64 arrays of any (broadcast-compatible) shape and are
elementwise, so they are safe to call on views of stacked state.
"""

from __future__ import annotations

import numpy as np

# Lower bound on the per-voxel second moment s = |mean|^2 + cov.  s = 0 makes
# the barrier objective unbounded below (infimum at r -> 0+), so it is lifted
# to a tiny positive value; outputs then collapse toward 0 as expected.
S_FLOOR = 1e-30

COMPILED = False


def covariance_diag(r_prime, noise_var, alpha):
    """c = noise_var * r' / (alpha * r' + noise_var), elementwise."""
    r_prime = np.asarray(r_prime, dtype=np.float64)
    return noise_var * r_prime / (alpha * r_prime + noise_var)


def prox_quadratic(v, r_prime, s, sigma2, beta):
    """Interval-clipped prox of the linearized convex part of the barrier.

    Per voxel: the convex part q(r) = r/r' + s/r has its derivative
    interpolated linearly between r' and xi (xi = r'/beta when q'(r') > 0,
    else beta*r'), and the prox of the resulting quadratic is clipped to the
    interval between r' and xi where the fit is trusted.
    """
    v = np.asarray(v, dtype=np.float64)
    r_prime = np.asarray(r_prime, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    dq = 1.0 / r_prime - s / (r_prime * r_prime)
    xi = np.where(dq > 0.0, r_prime / beta, r_prime * beta)
    # Slope of the derivative interpolation; always > 0, so the fit is convex.
    a = s * (xi + r_prime) / (r_prime * r_prime * xi * xi)
    b = dq - a * r_prime
    res = (v - sigma2 * b) / (1.0 + sigma2 * a)
    return np.clip(res, np.minimum(r_prime, xi), np.maximum(r_prime, xi))


def _cubic_objective(r, s, v, sigma2):
    bad = ~(r > 0.0) | ~np.isfinite(r)
    rr = np.where(bad, 1.0, r)
    obj = np.log(rr) + s / rr + (rr - v) ** 2 / (2.0 * sigma2)
    return np.where(bad, np.inf, obj)


def prox_cubic(v, s, sigma2):
    """Exact prox of log(r) + s/r under quadratic penalty (r - v)^2/(2 sigma2).

    Stationary points are roots of r^3 - v r^2 + sigma2 r - sigma2 s = 0.
    The largest real root is always positive and numerically benign, so it
    anchors a deflation: the other two roots come from the quadratic
    r^2 + (R - v) r + sigma2*s/R through the stable quadratic formula (the
    constant term is the root product, so a root far below R survives the
    cancellation that loses it in direct closed forms).  The positive root
    with the smallest objective wins (near-ties resolve toward v).
    """
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    v = np.asarray(v, dtype=np.float64)
    s = np.maximum(np.asarray(s, dtype=np.float64), S_FLOOR)
    shape = np.broadcast_shapes(v.shape, s.shape)
    v = np.broadcast_to(v, shape)
    s = np.broadcast_to(s, shape)

    # Depressed cubic t^3 + p t + q with r = t + v/3; big = largest real root.
    p = sigma2 - v * v / 3.0
    q = -2.0 * v**3 / 27.0 + v * sigma2 / 3.0 - sigma2 * s
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    big = np.empty(shape)
    one = disc > 0.0
    if np.any(one):
        a_h = -q[one] / 2.0
        b_h = np.sqrt(disc[one])
        u = np.cbrt(np.where(a_h >= 0.0, a_h + b_h, a_h - b_h))
        safe = u != 0.0
        t = np.where(safe, u - p[one] / np.where(safe, 3.0 * u, 1.0), 0.0)
        big[one] = t + v[one] / 3.0
    three = ~one
    if np.any(three):
        pm = p[three]
        m = 2.0 * np.sqrt(np.maximum(-pm / 3.0, 0.0))
        # acos argument clipped: roundoff can push it slightly past +-1;
        # theta in [0, pi/3] makes m*cos(theta) the leading root.
        denom = np.where(m > 0.0, pm * m, -1.0)
        arg = np.clip(3.0 * q[three] / denom, -1.0, 1.0)
        theta = np.arccos(arg) / 3.0
        big[three] = m * np.cos(theta) + v[three] / 3.0

    # Newton polish against the monic cubic; keeps the root positive.
    for _ in range(4):
        f = ((big - v) * big + sigma2) * big - sigma2 * s
        df = (3.0 * big - 2.0 * v) * big + sigma2
        step = np.where(np.abs(df) > 1e-300, f / np.where(df != 0, df, 1.0), 0.0)
        big = np.maximum(big - step, 1e-300)

    bq = big - v
    cq = sigma2 * s / big
    disc2 = bq * bq - 4.0 * cq
    sq = np.sqrt(np.maximum(disc2, 0.0))
    qq = -0.5 * (bq + np.copysign(sq, bq))
    pair = disc2 >= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.where(pair & (qq != 0.0), cq / qq, np.nan)

    cand = np.stack([big, small, np.where(pair, qq, np.nan)])
    obj = np.stack([_cubic_objective(cand[k], s, v, sigma2) for k in range(3)])
    best = np.min(obj, axis=0)
    # Tie rule: among near-minimal roots prefer the one closest to v.
    dist = np.where(obj <= best + 1e-12 * np.abs(best) + 1e-300, np.abs(cand - v[None]), np.inf)
    pick = np.argmin(dist, axis=0)
    res = np.take_along_axis(cand, pick[None], axis=0)[0].copy()

    missing = ~(np.isfinite(res) & (res > 0.0))
    if np.any(missing):
        res[missing] = [_bisect_root(float(vv), float(ss), sigma2)
                        for vv, ss in zip(v[missing], s[missing])]
    return res


def _bisect_root(v, s, sigma2):
    # Safety net: the cubic always has a positive root (value < 0 at 0+).
    lo, hi = 1e-300, max(abs(v), 1.0) + sigma2 + sigma2 * s + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = ((mid - v) * mid + sigma2) * mid - sigma2 * s
        if f > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
