"""Scene context fusion: the per-step decoder input built from a velocity
embedding, pooled scene CNN features and log-polar interaction pooling.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import kernels
from . import nn
from .autodiff import ShapeError, Tensor


@dataclass(frozen=True)
class PolarGridSpec:
    """Rings have edges ``r_min * g**m`` with ``g = (r_max / r_min) ** (1 / n_rings)``;
    wedges split [0, 2 pi) counter-clockwise from the +x axis."""

    n_rings: int = 4
    n_wedges: int = 8
    r_min: float = 0.5
    r_max: float = 16.0

    def __post_init__(self):
        if not (0 < self.r_min < self.r_max):
            raise ValueError("need 0 < r_min < r_max")
        if self.n_rings < 1 or self.n_wedges < 1:
            raise ValueError("n_rings and n_wedges must be >= 1")

    @property
    def n_bins(self):
        return self.n_rings * self.n_wedges

    @property
    def growth(self):
        return (self.r_max / self.r_min) ** (1.0 / self.n_rings)


def init_params(store, cfg, n_channels, rng, prefix="scf"):
    nn.add_conv2d(store, f"{prefix}.cnn1", 3, n_channels, cfg.cnn_features, rng)
    nn.add_conv2d(store, f"{prefix}.cnn2", 3, cfg.cnn_features, cfg.cnn_features, rng)
    nn.add_linear(store, f"{prefix}.vel", 2, cfg.vel_embed, rng)


@dataclass
class SceneFeatureMap:
    """CNN features for a stack of grids, flattened to (B * H' * W', F).

    Map b covers world cells (r, c) with the same tie rule as SceneGrid,
    lower corner ``origins[b]`` and ``cell_size``.
    """

    flat: Tensor
    origins: np.ndarray
    cell_size: float
    height: int
    width: int

    @property
    def n_maps(self):
        return self.origins.shape[0]

    def lookup(self, points, map_index):
        """Flat row of the cell under each point, -1 when outside its map."""
        idx = kernels.nearest_cell(points, self.origins[map_index], self.cell_size,
                                   self.height, self.width)
        base = np.asarray(map_index, dtype=np.int64) * (self.height * self.width)
        return np.where(idx >= 0, idx + base, -1)


def scene_cnn(grids, origins, cell_size, store, prefix="scf"):
    """Two 3x3 relu conv layers, stride 2 then 1.

    The stride-2 layer halves resolution: feature cell (i, j) takes the
    world footprint of input cells (2i..2i+1, 2j..2j+1), so the output has
    the grid's origin and twice its cell size.
    """
    x = ad.as_tensor(grids)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    h1 = ad.relu(ad.conv2d(x, store[f"{prefix}.cnn1.K"], stride=2) + store[f"{prefix}.cnn1.b"])
    h2 = ad.relu(ad.conv2d(h1, store[f"{prefix}.cnn2.K"], stride=1) + store[f"{prefix}.cnn2.b"])
    b, ho, wo, f = h2.shape
    origins = np.asarray(origins, dtype=np.float64).reshape(b, 2)
    return SceneFeatureMap(h2.reshape(b * ho * wo, f), origins, 2.0 * cell_size, ho, wo)


def pool_scene_feature(fmap, points, map_index):
    """Nearest-cell features at world points; zeros outside the map."""
    return ad.gather_rows(fmap.flat, fmap.lookup(points, map_index))


def embed_velocity(v, store, prefix="scf"):
    return ad.relu(nn.linear(store, f"{prefix}.vel", ad.as_tensor(v)))


def velocity_of(traj, t, last_point, dt):
    """Velocity of a sampled trajectory at step t (1-based), m/s.

    ``traj`` is (..., T, 2); step 0 is ``last_point``.
    """
    traj = np.asarray(traj, dtype=np.float64)
    prev = np.asarray(last_point, dtype=np.float64) if t == 1 else traj[..., t - 2, :]
    return (traj[..., t - 1, :] - prev) / dt


def velocities(traj, last_points, dt):
    """All step velocities of (S, T, 2) trajectories at once."""
    traj = np.asarray(traj, dtype=np.float64)
    prev = np.concatenate([np.asarray(last_points).reshape(-1, 1, 2), traj[:, :-1]], axis=1)
    return (traj - prev) / dt


def polar_bin(offset, spec):
    """Bin index of a single offset, or -1 beyond r_max."""
    return int(kernels.polar_bins(np.asarray(offset, dtype=np.float64).reshape(1, 2), spec.n_rings,
                                  spec.n_wedges, spec.r_min, spec.r_max)[0])


def pool_interactions(self_loc, others, spec, hidden_dim):
    """Average-pool neighbour hiddens into log-polar bins around ``self_loc``.

    ``others`` is a list of (location, hidden vector). Returns a vector of
    ``n_bins * hidden_dim`` laid out bin-major (bin = ring * n_wedges + wedge).
    Single-query reference form of :func:`interaction_operator`.
    """
    if not others:
        return np.zeros(spec.n_bins * hidden_dim)
    hid = np.stack([np.asarray(h, dtype=np.float64) for _, h in others])
    locs = np.stack([np.asarray(p, dtype=np.float64) for p, _ in others])
    bins = kernels.polar_bins(locs - np.asarray(self_loc, dtype=np.float64), spec.n_rings,
                              spec.n_wedges, spec.r_min, spec.r_max)
    out = np.zeros((spec.n_bins, hid.shape[1]))
    for b in range(spec.n_bins):
        sel = bins == b
        if np.any(sel):
            out[b] = hid[sel].mean(axis=0)
    return out.reshape(-1)


def interaction_operator(positions, group, owner, spec):
    """Sparse (S * n_bins, S) averaging operator for all streams at once.

    Stream q pools stream s when they share ``group`` (episode) and differ
    in ``owner`` (agent). ``group`` must be contiguous.
    """
    n = positions.shape[0]
    rows, cols, vals = kernels.polar_pool_coo(positions, group, owner, spec.n_rings,
                                              spec.n_wedges, spec.r_min, spec.r_max)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n * spec.n_bins, n))


def pooled_interactions(op, hidden, spec):
    """Apply an interaction operator to hiddens (S, h) -> (S, n_bins * h)."""
    n, h = hidden.shape
    return ad.spmm(op, hidden).reshape(n, spec.n_bins * h)


def fuse_step_input(vel_embed, scene_feat, interaction=None):
    """x_t = [velocity embedding, scene feature, interaction feature]."""
    parts = [vel_embed, scene_feat] + ([] if interaction is None else [interaction])
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"fuse_step_input row counts differ: {[p.shape for p in parts]}")
    return ad.concat(parts, axis=-1)


def input_dim(cfg, with_interactions):
    spec = polar_spec(cfg)
    return cfg.vel_embed + cfg.cnn_features + (spec.n_bins * cfg.h_dec if with_interactions else 0)


def polar_spec(cfg):
    return PolarGridSpec(cfg.n_rings, cfg.n_wedges, cfg.r_min, cfg.r_max)


def ring_edges(spec):
    return np.array([spec.r_min * spec.growth ** m for m in range(spec.n_rings + 1)])


def wedge_width(spec):
    return 2.0 * math.pi / spec.n_wedges
