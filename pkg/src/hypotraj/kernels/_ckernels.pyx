# cython: language_level=3
"""Compiled versions of the geometric kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, log, hypot, atan2, fmod, cos, sin, M_PI

cnp.import_array()


cdef inline long _cell(double u) nogil:
    if u == 0.0:
        return 0
    return <long>ceil(u) - 1


def nearest_cell(points, origins, double cell_size, long height, long width):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] o = np.ascontiguousarray(
        np.broadcast_to(np.asarray(origins, dtype=np.float64), (p.shape[0], 2)))
    cdef Py_ssize_t n = p.shape[0], i
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    cdef long r, c
    with nogil:
        for i in range(n):
            c = _cell((p[i, 0] - o[i, 0]) / cell_size)
            r = _cell((p[i, 1] - o[i, 1]) / cell_size)
            if c >= 0 and c < width and r >= 0 and r < height:
                res[i] = r * width + c
            else:
                res[i] = -1
    return out


cdef inline long _bin(double dx, double dy, long n_rings, long n_wedges,
                      double r_min, double r_max, double growth) nogil:
    cdef double r = hypot(dx, dy)
    cdef double rr, ang
    cdef long ring, wedge
    if r > r_max:
        return -1
    rr = r if r > r_min else r_min
    ring = <long>floor(log(rr / r_min) / growth)
    if ring < 0:
        ring = 0
    elif ring > n_rings - 1:
        ring = n_rings - 1
    ang = fmod(atan2(dy, dx), 2.0 * M_PI)
    if ang < 0:
        ang += 2.0 * M_PI
    wedge = <long>floor(ang / (2.0 * M_PI / n_wedges))
    if wedge < 0:
        wedge = 0
    elif wedge > n_wedges - 1:
        wedge = n_wedges - 1
    return ring * n_wedges + wedge


def polar_bins(offsets, long n_rings, long n_wedges, double r_min, double r_max):
    cdef const double[:, ::1] off = np.ascontiguousarray(offsets, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n = off.shape[0], i
    cdef double growth = log(r_max / r_min) / n_rings
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    with nogil:
        for i in range(n):
            res[i] = _bin(off[i, 0], off[i, 1], n_rings, n_wedges, r_min, r_max, growth)
    return out


def polar_pool_coo(pos, group, owner, long n_rings, long n_wedges, double r_min, double r_max):
    cdef const double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64).reshape(-1, 2)
    cdef const cnp.int64_t[::1] g = np.ascontiguousarray(group, dtype=np.int64)
    cdef const cnp.int64_t[::1] o = np.ascontiguousarray(owner, dtype=np.int64)
    cdef Py_ssize_t n = p.shape[0], q, s, a, b, m, k = 0, bound = 0, widest = 0
    cdef long n_bins = n_rings * n_wedges, bn
    cdef double growth = log(r_max / r_min) / n_rings
    # group extents give the pair bound and the bin cache size
    a = 0
    while a < n:
        b = a
        while b < n and g[b] == g[a]:
            b += 1
        bound += (b - a) * (b - a)
        widest = max(widest, b - a)
        a = b
    counts_arr = np.zeros(n * n_bins, dtype=np.int64)
    cache_arr = np.empty(widest * widest, dtype=np.int64)
    rows_arr = np.empty(bound, dtype=np.int64)
    cols_arr = np.empty(bound, dtype=np.int64)
    vals_arr = np.empty(bound, dtype=np.float64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef cnp.int64_t[::1] cache = cache_arr
    cdef cnp.int64_t[::1] rows = rows_arr
    cdef cnp.int64_t[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr
    a = 0
    with nogil:
        while a < n:
            b = a
            while b < n and g[b] == g[a]:
                b += 1
            m = b - a
            for q in range(a, b):
                for s in range(a, b):
                    if o[s] == o[q]:
                        bn = -1
                    else:
                        bn = _bin(p[s, 0] - p[q, 0], p[s, 1] - p[q, 1],
                                  n_rings, n_wedges, r_min, r_max, growth)
                    cache[(q - a) * m + (s - a)] = bn
                    if bn >= 0:
                        counts[q * n_bins + bn] += 1
            for q in range(a, b):
                for s in range(a, b):
                    bn = cache[(q - a) * m + (s - a)]
                    if bn >= 0:
                        rows[k] = q * n_bins + bn
                        cols[k] = s
                        vals[k] = 1.0 / counts[q * n_bins + bn]
                        k += 1
            a = b
    return rows_arr[:k].copy(), cols_arr[:k].copy(), vals_arr[:k].copy()


def rotate_nearest(values, origin, double cell_size, double angle, pivot):
    vals = np.ascontiguousarray(values, dtype=np.float64)
    if angle == 0.0:
        return vals.copy()
    cdef Py_ssize_t h = vals.shape[0], w = vals.shape[1]
    cdef Py_ssize_t ch = vals.size // (h * w) if h * w > 0 else 0
    cdef const double[:, ::1] src = vals.reshape(h * w, ch)
    out_arr = np.zeros((h * w, ch), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double ox = origin[0], oy = origin[1], px = pivot[0], py = pivot[1]
    cdef double c = cos(angle), s = sin(angle), cx, cy, sx, sy
    cdef Py_ssize_t i, j, m
    cdef long r, col
    with nogil:
        for i in range(h):
            for j in range(w):
                cx = ox + (j + 0.5) * cell_size - px
                cy = oy + (i + 0.5) * cell_size - py
                sx = c * cx + s * cy + px
                sy = -s * cx + c * cy + py
                col = _cell((sx - ox) / cell_size)
                r = _cell((sy - oy) / cell_size)
                if col >= 0 and col < w and r >= 0 and r < h:
                    for m in range(ch):
                        out[i * w + j, m] = src[r * w + col, m]
    return out_arr.reshape(vals.shape)


def points_in_polygon(points, polygon):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] poly = np.ascontiguousarray(polygon, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n = p.shape[0], nv = poly.shape[0], i, e
    out = np.zeros(n, dtype=bool)
    cdef cnp.npy_bool[::1] res = out
    cdef double x, y, x1, y1, x2, y2, xint
    cdef bint inside
    with nogil:
        for i in range(n):
            x = p[i, 0]
            y = p[i, 1]
            inside = False
            for e in range(nv):
                x1 = poly[e, 0]
                y1 = poly[e, 1]
                x2 = poly[(e + 1) % nv, 0]
                y2 = poly[(e + 1) % nv, 1]
                if y1 == y2:
                    continue
                if (y1 > y) != (y2 > y):
                    xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                    if x < xint:
                        inside = not inside
            res[i] = inside
    return out
