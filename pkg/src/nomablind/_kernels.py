"""Compiled inner loops for the Gaussian-mixture likelihoods and nearest-point searches."""

import math
import os

import numba
import numpy as np

# terms further than this many nats below the best one are below double rounding
_LSE_CUTOFF = 50.0

# the portable work-queue pool avoids version checks on system TBB builds
numba.config.THREADING_LAYER = "workqueue"

_workers = os.environ.get("NOMABLIND_WORKERS")
if _workers:
    numba.set_num_threads(max(1, min(int(_workers), numba.config.NUMBA_NUM_THREADS)))


@numba.njit(parallel=True, cache=True)
def mixture_loglik(ys, hs, sigma2, points):
    """log[(1/M) sum_s exp(-|y - h s|^2 / sigma2) / (pi sigma2)] per sample."""
    n = ys.shape[0]
    m = points.shape[0]
    out = np.empty(n)
    log_m = math.log(m)
    for i in numba.prange(n):
        y = ys[i]
        h = hs[i]
        inv = 1.0 / sigma2[i]
        d2 = np.empty(m)
        dmin = np.inf
        for k in range(m):
            e = y - h * points[k]
            v = e.real * e.real + e.imag * e.imag
            d2[k] = v
            if v < dmin:
                dmin = v
        acc = 0.0
        for k in range(m):
            x = (d2[k] - dmin) * inv
            if x < _LSE_CUTOFF:
                acc += math.exp(-x)
        out[i] = -dmin * inv + math.log(acc) - log_m - math.log(math.pi * sigma2[i])
    return out


@numba.njit(parallel=True, cache=True)
def nearest_point(ys, hs, points):
    """Index of argmin_k |y - h p_k| (first index on ties) and that squared distance."""
    n = ys.shape[0]
    m = points.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist2 = np.empty(n)
    for i in numba.prange(n):
        best = np.inf
        arg = 0
        for k in range(m):
            e = ys[i] - hs[i] * points[k]
            v = e.real * e.real + e.imag * e.imag
            if v < best:
                best = v
                arg = k
        idx[i] = arg
        dist2[i] = best
    return idx, dist2


@numba.njit(cache=True)
def _axis_lse(x, levels, c):
    best = np.inf
    for a in levels:
        d = (x - a) * (x - a) * c
        if d < best:
            best = d
    acc = 0.0
    for a in levels:
        d = (x - a) * (x - a) * c - best
        if d < _LSE_CUTOFF:
            acc += math.exp(-d)
    return -best + math.log(acc)


@numba.njit(parallel=True, cache=True)
def product_loglik(ys, hs, sigma2, levels, rot):
    """Same value as ``mixture_loglik`` for the set {rot (a + jb): a, b in levels}.

    |y - h rot s|^2 = |h|^2 |z - s|^2 with z = y / (h rot), so the mixture
    factors into one sum per axis: 2 sqrt(M) terms instead of M.
    """
    n = ys.shape[0]
    log_m = 2.0 * math.log(levels.shape[0])
    out = np.empty(n)
    for i in numba.prange(n):
        g = hs[i] * rot
        g2 = g.real * g.real + g.imag * g.imag
        s2 = sigma2[i]
        if g2 == 0.0:
            y = ys[i]
            out[i] = -(y.real * y.real + y.imag * y.imag) / s2 - math.log(math.pi * s2)
            continue
        z = ys[i] * g.conjugate() / g2
        c = g2 / s2
        out[i] = (_axis_lse(z.real, levels, c) + _axis_lse(z.imag, levels, c)
                  - log_m - math.log(math.pi * s2))
    return out


def product_set_loglik(ys, hs, sigma2, levels, rotation):
    """Broadcasting front end of ``product_loglik``; ``rotation`` is an angle."""
    ys = np.asarray(ys, dtype=np.complex128)
    shape = ys.shape
    flat = np.ascontiguousarray(ys.ravel())
    h = np.ascontiguousarray(np.broadcast_to(np.asarray(hs, dtype=np.complex128), shape).ravel())
    s2 = np.ascontiguousarray(np.broadcast_to(np.asarray(sigma2, dtype=np.float64), shape).ravel())
    lev = np.ascontiguousarray(np.asarray(levels, dtype=np.float64))
    rot = complex(np.exp(1j * rotation))
    return product_loglik(flat, h, s2, lev, rot).reshape(shape)


def loglik(ys, hs, sigma2, points):
    """Broadcasting front end: ``ys`` any shape, ``hs``/``sigma2`` broadcastable to it."""
    ys = np.asarray(ys, dtype=np.complex128)
    shape = ys.shape
    flat = np.ascontiguousarray(ys.ravel())
    h = np.ascontiguousarray(np.broadcast_to(np.asarray(hs, dtype=np.complex128), shape).ravel())
    s2 = np.ascontiguousarray(np.broadcast_to(np.asarray(sigma2, dtype=np.float64), shape).ravel())
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.complex128))
    return mixture_loglik(flat, h, s2, pts).reshape(shape)


def nearest(ys, hs, points):
    ys = np.asarray(ys, dtype=np.complex128)
    shape = ys.shape
    flat = np.ascontiguousarray(ys.ravel())
    h = np.ascontiguousarray(np.broadcast_to(np.asarray(hs, dtype=np.complex128), shape).ravel())
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.complex128))
    idx, d2 = nearest_point(flat, h, pts)
    return idx.reshape(shape), d2.reshape(shape)
