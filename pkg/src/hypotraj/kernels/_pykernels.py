"""Pure numpy implementations of the geometric hot kernels.

These define the reference semantics; the Cython module must agree with
them exactly (tests compare both backends).
"""

import math

import numpy as np


def cell_index(u):
    """Map continuous cell coordinates to integer cells.

    A point on a cell boundary goes to the lower-index cell, except the
    outer lower edge of the grid (u == 0) which belongs to cell 0.
    """
    u = np.asarray(u, dtype=np.float64)
    idx = np.ceil(u).astype(np.int64) - 1
    idx[u == 0.0] = 0
    return idx


def nearest_cell(points, origins, cell_size, height, width):
    """Flat row-major cell index of each world point, -1 when outside.

    Column follows x, row follows y. ``origins`` holds one grid origin
    (world coordinate of the lower corner of cell (0, 0)) per point.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), points.shape)
    col = cell_index((points[:, 0] - origins[:, 0]) / cell_size)
    row = cell_index((points[:, 1] - origins[:, 1]) / cell_size)
    inside = (col >= 0) & (col < width) & (row >= 0) & (row < height)
    out = np.full(points.shape[0], -1, dtype=np.int64)
    out[inside] = row[inside] * width + col[inside]
    return out


def polar_bins(offsets, n_rings, n_wedges, r_min, r_max):
    """Log-polar bin index (ring * n_wedges + wedge) per offset, -1 if dropped."""
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    r = np.hypot(offsets[:, 0], offsets[:, 1])
    growth = math.log(r_max / r_min) / n_rings
    with np.errstate(divide="ignore"):
        ring = np.floor(np.log(np.maximum(r, r_min) / r_min) / growth).astype(np.int64)
    np.clip(ring, 0, n_rings - 1, out=ring)
    ang = np.mod(np.arctan2(offsets[:, 1], offsets[:, 0]), 2.0 * math.pi)
    wedge = np.floor(ang / (2.0 * math.pi / n_wedges)).astype(np.int64)
    np.clip(wedge, 0, n_wedges - 1, out=wedge)
    b = ring * n_wedges + wedge
    b[r > r_max] = -1
    return b


def polar_pool_coo(pos, group, owner, n_rings, n_wedges, r_min, r_max):
    """Sparse averaging operator for log-polar interaction pooling.

    Streams are rows of ``pos``. Stream s is pooled by query q when both
    share ``group`` and differ in ``owner``. Returns COO triplets for an
    operator of shape (S * n_bins, S): row ``q * n_bins + b`` averages the
    streams whose offset from q falls in bin b.

    ``group`` must be sorted so that each group is contiguous.
    """
    pos = np.ascontiguousarray(pos, dtype=np.float64).reshape(-1, 2)
    group = np.asarray(group, dtype=np.int64)
    owner = np.asarray(owner, dtype=np.int64)
    n_bins = n_rings * n_wedges
    rows, cols, vals = [], [], []
    bounds = np.flatnonzero(np.diff(group)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [group.shape[0]]])
    for a, b in zip(starts, stops):
        p = pos[a:b]
        o = owner[a:b]
        n = b - a
        off = p[None, :, :] - p[:, None, :]
        bins = polar_bins(off.reshape(-1, 2), n_rings, n_wedges, r_min, r_max).reshape(n, n)
        bins[o[:, None] == o[None, :]] = -1
        q, s = np.nonzero(bins >= 0)
        if q.size == 0:
            continue
        r_idx = (q + a) * n_bins + bins[q, s]
        counts = np.bincount(r_idx, minlength=0)
        rows.append(r_idx)
        cols.append(s + a)
        vals.append(1.0 / counts[r_idx])
    if not rows:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), np.zeros(0, dtype=np.float64)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def rotate_nearest(values, origin, cell_size, angle, pivot):
    """Resample a H x W x C grid rotated by ``angle`` about ``pivot``.

    Each output cell center is mapped back through the inverse rotation and
    takes the value of the source cell found by nearest-cell lookup; cells
    whose preimage is outside the grid become zero.
    """
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape[:2]
    if angle == 0.0:
        return values.copy()
    ox, oy = float(origin[0]), float(origin[1])
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    cx = ox + (cols + 0.5) * cell_size - pivot[0]
    cy = oy + (rows + 0.5) * cell_size - pivot[1]
    c, s = math.cos(angle), math.sin(angle)
    # inverse rotation
    sx = c * cx + s * cy + pivot[0]
    sy = -s * cx + c * cy + pivot[1]
    src = nearest_cell(np.stack([sx.ravel(), sy.ravel()], axis=1), (ox, oy), cell_size, h, w)
    flat = values.reshape(h * w, -1)
    out = np.zeros_like(flat)
    ok = src >= 0
    out[ok] = flat[src[ok]]
    return out.reshape(values.shape)


def points_in_polygon(points, polygon):
    """Even-odd ray casting test of each point against one polygon."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(points.shape[0], dtype=bool)
    n = poly.shape[0]
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > y) != (y2 > y)
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside
