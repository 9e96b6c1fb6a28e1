# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-voxel kernels: fused scalar loops mirroring _kernels_py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, M_PI, NAN, acos, cbrt, cos, fabs, fmax, fmin, isfinite, log, sqrt

cnp.import_array()

COMPILED = True

S_FLOOR = 1e-30
cdef double _S_FLOOR = 1e-30


def covariance_diag(r_prime, double noise_var, double alpha):
    shape = np.shape(r_prime)
    cdef cnp.ndarray[double, ndim=1] rp = np.ascontiguousarray(
        r_prime, dtype=np.float64).ravel()
    res = np.empty(rp.shape[0])
    cdef cnp.ndarray[double, ndim=1] o = res
    cdef Py_ssize_t i, n = rp.shape[0]
    for i in range(n):
        o[i] = noise_var * rp[i] / (alpha * rp[i] + noise_var)
    return res.reshape(shape)


def prox_quadratic(v, r_prime, s, double sigma2, double beta):
    shape = np.broadcast_shapes(np.shape(v), np.shape(r_prime), np.shape(s))
    cdef cnp.ndarray[double, ndim=1] va = np.ascontiguousarray(
        np.broadcast_to(np.asarray(v, dtype=np.float64), shape)).ravel()
    cdef cnp.ndarray[double, ndim=1] ra = np.ascontiguousarray(
        np.broadcast_to(np.asarray(r_prime, dtype=np.float64), shape)).ravel()
    cdef cnp.ndarray[double, ndim=1] sa = np.ascontiguousarray(
        np.broadcast_to(np.asarray(s, dtype=np.float64), shape)).ravel()
    res = np.empty(va.shape[0])
    cdef cnp.ndarray[double, ndim=1] o = res
    cdef Py_ssize_t i, n = va.shape[0]
    cdef double rp, inv, inv_xi, dq, xi, a, b, y
    cdef double inv_beta = 1.0 / beta
    for i in range(n):
        rp = ra[i]
        inv = 1.0 / rp
        dq = inv - sa[i] * inv * inv
        xi = rp * (inv_beta if dq > 0.0 else beta)
        inv_xi = inv * (beta if dq > 0.0 else inv_beta)
        a = sa[i] * (xi + rp) * (inv * inv) * (inv_xi * inv_xi)
        b = dq - a * rp
        y = (va[i] - sigma2 * b) / (1.0 + sigma2 * a)
        o[i] = fmin(fmax(y, fmin(rp, xi)), fmax(rp, xi))
    return res.reshape(shape)


cdef inline double _objective(double r, double s, double v, double sigma2) nogil:
    if r <= 0.0 or not isfinite(r):
        return INFINITY
    return log(r) + s / r + (r - v) * (r - v) / (2.0 * sigma2)


cdef double _cubic_one(double v, double s, double sigma2) nogil:
    # Largest real root by Cardano/trig, Newton-polished, then deflation:
    # the remaining roots solve r^2 + (big - v) r + sigma2*s/big = 0, whose
    # constant term (the root product) keeps a far-smaller root accurate.
    cdef double p, q, disc, a_h, b_h, u, m, arg, theta
    cdef double big, bq, cq, disc2, sq, qq
    cdef double cand0, cand1 = NAN, cand2 = NAN
    cdef double best, obj0, obj1, obj2, res, tol, d, dres
    cdef double lo, hi, mid, f, df
    cdef int it

    p = sigma2 - v * v / 3.0
    q = -2.0 * v * v * v / 27.0 + v * sigma2 / 3.0 - sigma2 * s
    disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0)
    if disc > 0.0:
        a_h = -q / 2.0
        b_h = sqrt(disc)
        u = cbrt(a_h + b_h) if a_h >= 0.0 else cbrt(a_h - b_h)
        if u != 0.0:
            big = u - p / (3.0 * u) + v / 3.0
        else:
            big = v / 3.0
    else:
        m = 2.0 * sqrt(-p / 3.0 if p < 0.0 else 0.0)
        if m > 0.0:
            arg = 3.0 * q / (p * m)
            if arg > 1.0:
                arg = 1.0
            elif arg < -1.0:
                arg = -1.0
        else:
            arg = 0.0
        theta = acos(arg) / 3.0
        big = m * cos(theta) + v / 3.0

    for it in range(4):
        f = ((big - v) * big + sigma2) * big - sigma2 * s
        df = (3.0 * big - 2.0 * v) * big + sigma2
        if fabs(df) > 1e-300:
            big = big - f / df
            if big < 1e-300:
                big = 1e-300

    cand0 = big
    bq = big - v
    cq = sigma2 * s / big
    disc2 = bq * bq - 4.0 * cq
    if disc2 >= 0.0:
        sq = sqrt(disc2)
        qq = -0.5 * (bq + (sq if bq >= 0.0 else -sq))
        if qq != 0.0:
            cand1 = cq / qq
        cand2 = qq

    obj0 = _objective(cand0, s, v, sigma2)
    obj1 = _objective(cand1, s, v, sigma2)
    obj2 = _objective(cand2, s, v, sigma2)
    best = obj0
    if obj1 < best:
        best = obj1
    if obj2 < best:
        best = obj2

    if best == INFINITY:
        # Bisection fallback; the cubic is negative at 0+ so a positive
        # root always exists.
        lo = 1e-300
        hi = (fabs(v) if fabs(v) > 1.0 else 1.0) + sigma2 + sigma2 * s + 1.0
        for it in range(200):
            mid = 0.5 * (lo + hi)
            f = ((mid - v) * mid + sigma2) * mid - sigma2 * s
            if f > 0.0:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    # Smallest objective wins; near-ties resolve toward v.
    tol = 1e-12 * fabs(best) + 1e-300
    res = 0.0
    dres = INFINITY
    if obj0 <= best + tol:
        d = fabs(cand0 - v)
        if d < dres:
            res = cand0
            dres = d
    if obj1 <= best + tol:
        d = fabs(cand1 - v)
        if d < dres:
            res = cand1
            dres = d
    if obj2 <= best + tol:
        d = fabs(cand2 - v)
        if d < dres:
            res = cand2
            dres = d
    return res


def prox_cubic(v, s, double sigma2):
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    shape = np.broadcast_shapes(np.shape(v), np.shape(s))
    cdef cnp.ndarray[double, ndim=1] va = np.ascontiguousarray(
        np.broadcast_to(np.asarray(v, dtype=np.float64), shape)).ravel()
    cdef cnp.ndarray[double, ndim=1] sa = np.ascontiguousarray(
        np.broadcast_to(np.asarray(s, dtype=np.float64), shape)).ravel()
    res = np.empty(va.shape[0])
    cdef cnp.ndarray[double, ndim=1] o = res
    cdef Py_ssize_t i, n = va.shape[0]
    cdef double si
    for i in range(n):
        si = sa[i] if sa[i] > _S_FLOOR else _S_FLOOR
        o[i] = _cubic_one(va[i], si, sigma2)
    return res.reshape(shape)
