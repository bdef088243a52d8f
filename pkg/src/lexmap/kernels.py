"""Hot numeric kernels: ray tracing, distance transform, likelihood field.

Each kernel is written once as a plain numpy/loop function; when numba is
available and the ``LEXMAP_NUMBA`` env flag is not disabled, the same source
is compiled with ``@njit``. The interpreted path is the fallback and the
reference for equality tests (``benchmarks/kernel_bench.py`` compares both).
"""

from __future__ import annotations

import math
import os

import numpy as np

_FAR = 1e20  # finite "infinity" keeps the parabola intersections well-defined


def _env_enabled() -> bool:
    return os.environ.get("LEXMAP_NUMBA", "1").strip().lower() not in (
        "0", "false", "no", "off")


NUMBA_ENABLED = False
if _env_enabled():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass


def _maybe_jit(fn):
    if NUMBA_ENABLED:
        return njit(cache=True, fastmath=False)(fn)
    return fn


def _raytrace_update_impl(log_odds, cx0, cy0, ex, ey, hit, l_free, l_occ, l_max):
    """Bresenham free-space decrements along each beam, hit increment at the end.

    Endpoint cells are never decremented; all cells clamp to [-l_max, l_max].
    Cell coordinates must already lie inside the grid.
    """
    n_beams = ex.shape[0]
    for b in range(n_beams):
        x1 = ex[b]
        y1 = ey[b]
        cx = cx0
        cy = cy0
        dx = abs(x1 - cx)
        dy = -abs(y1 - cy)
        sx = 1 if cx < x1 else -1
        sy = 1 if cy < y1 else -1
        err = dx + dy
        while not (cx == x1 and cy == y1):
            lo = log_odds[cy, cx] - l_free
            log_odds[cy, cx] = lo if lo > -l_max else -l_max
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                cx += sx
            if e2 <= dx:
                err += dx
                cy += sy
        if hit[b]:
            lo = log_odds[y1, x1] + l_occ
            log_odds[y1, x1] = lo if lo < l_max else l_max


def _squared_edt_impl(occ):
    """Exact squared Euclidean distance transform (cells) to occupied cells.

    Felzenszwalb-Huttenlocher two-pass parabola method; cells with no
    occupied cell anywhere come out >= _FAR.
    """
    h, w = occ.shape
    g = np.empty((h, w), np.float64)
    out = np.empty((h, w), np.float64)
    m = h if h > w else w
    v = np.empty(m, np.int64)
    z = np.empty(m + 1, np.float64)

    for x in range(w):
        k = 0
        v[0] = 0
        z[0] = -_FAR
        z[1] = _FAR
        for q in range(1, h):
            fq = 0.0 if occ[q, x] else _FAR
            while True:
                fv = 0.0 if occ[v[k], x] else _FAR
                s = ((fq + q * q) - (fv + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = _FAR
        k = 0
        for q in range(h):
            while z[k + 1] < q:
                k += 1
            fv = 0.0 if occ[v[k], x] else _FAR
            g[q, x] = (q - v[k]) * (q - v[k]) + fv

    for y in range(h):
        k = 0
        v[0] = 0
        z[0] = -_FAR
        z[1] = _FAR
        for q in range(1, w):
            fq = g[y, q]
            while True:
                fv = g[y, v[k]]
                s = ((fq + q * q) - (fv + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = _FAR
        k = 0
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            out[y, q] = (q - v[k]) * (q - v[k]) + g[y, v[k]]
    return out


def _likelihood_field_impl(dist2, ex, ey, origin_x, origin_y, resolution,
                           gauss_coef, inv_two_sigma2, floor_term):
    """Sum of per-beam log mixture terms of the likelihood-field model.

    ``gauss_coef`` is w_hit / (sigma * sqrt(2*pi)); ``floor_term`` is
    w_rand / z_max. Endpoints off the grid fall back to the floor term.
    """
    h, w = dist2.shape
    total = 0.0
    for b in range(ex.shape[0]):
        cx = int(math.floor((ex[b] - origin_x) / resolution))
        cy = int(math.floor((ey[b] - origin_y) / resolution))
        mix = floor_term
        if 0 <= cx < w and 0 <= cy < h:
            d2 = dist2[cy, cx]
            if d2 < 1e18:
                d2_m = d2 * resolution * resolution
                mix = gauss_coef * math.exp(-d2_m * inv_two_sigma2) + floor_term
        total += math.log(mix)
    return total


raytrace_update = _maybe_jit(_raytrace_update_impl)
squared_edt = _maybe_jit(_squared_edt_impl)
likelihood_field_sum = _maybe_jit(_likelihood_field_impl)


def warmup() -> None:
    """Trigger JIT compilation so timing loops never pay the compile cost."""
    occ = np.zeros((4, 4), np.bool_)
    occ[1, 1] = True
    d2 = squared_edt(occ)
    lo = np.zeros((4, 4), np.float64)
    raytrace_update(lo, 0, 0, np.array([3], np.int64), np.array([3], np.int64),
                    np.array([True]), 0.4, 0.85, 10.0)
    likelihood_field_sum(d2, np.array([0.1]), np.array([0.1]), 0.0, 0.0, 0.1,
                         3.59, 50.0, 0.01)
