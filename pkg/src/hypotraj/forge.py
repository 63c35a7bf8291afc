"""Deterministic synthetic worlds.

``fork``: agents drive along a corridor and take one of several branches at
a junction, so identical pasts have several futures.

``avoidance``: agents cross an open plaza on straight lines; an agent whose
constant-velocity closest approach to another is predicted to fall below
``d_min`` within ``horizon`` seconds commits to a lateral deflection of
``deflection`` meters to its right, moving sideways at ``lateral_speed``.

``straight``: constant-velocity agents, no interaction.

Every episode is drawn from its own generator seeded by ``(seed, index)``,
so generation is a pure function of the config.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .scene import AgentTrack, Episode, SceneGrid

BACKGROUND = 0
DRIVABLE = 1
N_CLASSES = 2


@dataclass(frozen=True)
class GridSpec:
    height: int = 80
    width: int = 80
    cell_size: float = 0.5
    origin: tuple = (-20.0, -20.0)


@dataclass(frozen=True)
class WorldConfig:
    kind: str = "fork"
    n_episodes: int = 100
    n_agents: int = 1
    noise_std: float = 0.05
    branch_probs: tuple = (0.5, 0.5)
    seed: int = 0
    grid: GridSpec = field(default_factory=GridSpec)
    dt: float = 0.5
    iota: int = 4
    delta: int = 8
    n_videos: int = 10
    speed_range: tuple = (2.0, 4.0)
    # fork geometry
    branch_angle: float = math.radians(35.0)
    half_width: float = 2.0
    junction_delay: tuple = (0.0, 1.5)
    lane_jitter: float = 0.5
    # avoidance rule
    d_min: float = 2.0
    horizon: float = 1.5
    deflection: float = 2.0
    lateral_speed: float = 1.5
    crossing_time: tuple = (2.5, 4.0)
    crossing_jitter: float = 3.0
    substeps: int = 5

    def __post_init__(self):
        if self.kind not in ("fork", "avoidance", "straight"):
            raise ValueError(f"unknown world kind {self.kind!r}")
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        probs = np.asarray(self.branch_probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"branch_probs must be a probability vector, got {self.branch_probs}")


def rasterize_semantics(geometry, grid):
    """One-hot SceneGrid from ``[(class_index, polygon), ...]``.

    Channel 0 is background; a cell takes the class of the last polygon
    containing its center.
    """
    n_ch = max([N_CLASSES] + [c + 1 for c, _ in geometry])
    h, w = grid.height, grid.width
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    centers = np.stack([grid.origin[0] + (cols.ravel() + 0.5) * grid.cell_size,
                        grid.origin[1] + (rows.ravel() + 0.5) * grid.cell_size], axis=1)
    label = np.full(h * w, BACKGROUND, dtype=np.int64)
    for cls, poly in geometry:
        label[kernels.points_in_polygon(centers, poly)] = cls
    values = np.zeros((h * w, n_ch))
    values[np.arange(h * w), label] = 1.0
    return SceneGrid(values.reshape(h, w, n_ch), grid.cell_size, grid.origin)


def _strip(start, angle, length, half_width):
    d = np.array([math.cos(angle), math.sin(angle)])
    n = np.array([-d[1], d[0]])
    s = np.asarray(start, dtype=np.float64)
    e = s + length * d
    return np.array([s - half_width * n, e - half_width * n, e + half_width * n, s + half_width * n])


def branch_angles(cfg):
    k = len(cfg.branch_probs)
    if k == 1:
        return [0.0]
    return list(np.linspace(cfg.branch_angle, -cfg.branch_angle, k))


def fork_geometry(cfg):
    corridor = _strip((-40.0, 0.0), 0.0, 40.0, cfg.half_width)
    polys = [(DRIVABLE, corridor)]
    polys += [(DRIVABLE, _strip((0.0, 0.0), a, 40.0, cfg.half_width)) for a in branch_angles(cfg)]
    return polys


def _times(cfg):
    return cfg.dt * np.arange(-(cfg.iota - 1), cfg.delta + 1)


def _video(cfg, index):
    return f"v{index * cfg.n_videos // max(cfg.n_episodes, 1):03d}"


def _episode(cfg, index, tracks, scene, meta):
    agents = []
    iota = cfg.iota
    for a, pts in enumerate(tracks):
        agents.append(AgentTrack(f"a{a}", pts[:iota], pts[iota:]))
    return Episode(f"{cfg.kind}-s{cfg.seed}-{index:05d}", _video(cfg, index), cfg.dt,
                   cfg.iota, cfg.delta, tuple(agents), scene, meta)


def generate_fork_world(cfg):
    if cfg.kind != "fork":
        raise ValueError("generate_fork_world needs kind='fork'")
    scene = rasterize_semantics(fork_geometry(cfg), cfg.grid)
    angles = branch_angles(cfg)
    t = _times(cfg)
    out = []
    for i in range(cfg.n_episodes):
        rng = np.random.default_rng([cfg.seed, i])
        tracks, branches = [], []
        for _ in range(cfg.n_agents):
            v = rng.uniform(*cfg.speed_range)
            tau = rng.uniform(*cfg.junction_delay)
            lane = rng.uniform(-cfg.lane_jitter, cfg.lane_jitter)
            b = int(rng.choice(len(angles), p=np.asarray(cfg.branch_probs)))
            s = v * (t - tau)
            pts = np.stack([s, np.full_like(s, lane)], axis=1)
            after = s > 0
            d = np.array([math.cos(angles[b]), math.sin(angles[b])])
            pts[after] = np.array([0.0, lane]) + s[after, None] * d
            pts = pts + rng.normal(0.0, cfg.noise_std, size=pts.shape) if cfg.noise_std > 0 else pts
            tracks.append(pts)
            branches.append(b)
        out.append(_episode(cfg, i, tracks, scene, {"branches": tuple(branches)}))
    return out


def simulate_avoidance(anchors, velocities, times, d_min, horizon, deflection,
                       lateral_speed, substeps=5):
    """Roll the avoidance rule; returns positions (n_agents, len(times), 2).

    Agent i's nominal position is ``anchors[i] + velocities[i] * t``; its
    actual position adds ``offset_i * right_normal_i``. Offsets start at 0.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    vel = np.asarray(velocities, dtype=np.float64).reshape(-1, 2)
    times = np.asarray(times, dtype=np.float64)
    n = anchors.shape[0]
    speed = np.linalg.norm(vel, axis=1)
    safe = np.where(speed > 0, speed, 1.0)
    right = np.stack([vel[:, 1], -vel[:, 0]], axis=1) / safe[:, None]
    offset = np.zeros(n)
    target = np.zeros(n)
    out = np.zeros((n, times.size, 2))

    def position(t):
        return anchors + vel * t + offset[:, None] * right

    out[:, 0] = position(times[0])
    for step in range(1, times.size):
        t0, t1 = times[step - 1], times[step]
        h = (t1 - t0) / substeps
        for sub in range(substeps):
            t = t0 + sub * h
            p = position(t)
            dp = p[None, :, :] - p[:, None, :]
            dv = vel[None, :, :] - vel[:, None, :]
            dv2 = np.sum(dv * dv, axis=-1)
            tcpa = np.where(dv2 > 0, -np.sum(dp * dv, axis=-1) / np.where(dv2 > 0, dv2, 1.0), 0.0)
            dca = np.linalg.norm(dp + dv * tcpa[..., None], axis=-1)
            hit = (tcpa >= 0) & (tcpa <= horizon) & (dca < d_min)
            np.fill_diagonal(hit, False)
            target[hit.any(axis=1)] = deflection
            offset = np.minimum(target, offset + lateral_speed * h)
        out[:, step] = position(t1)
    return out


def generate_avoidance_world(cfg):
    if cfg.kind != "avoidance":
        raise ValueError("generate_avoidance_world needs kind='avoidance'")
    extent = cfg.grid.origin, (cfg.grid.origin[0] + cfg.grid.width * cfg.grid.cell_size,
                               cfg.grid.origin[1] + cfg.grid.height * cfg.grid.cell_size)
    (x0, y0), (x1, y1) = extent
    plaza = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    scene = rasterize_semantics([(DRIVABLE, plaza)], cfg.grid)
    t = _times(cfg)
    sim_t = np.concatenate([[t[0] - 2.0], t])
    out = []
    for i in range(cfg.n_episodes):
        rng = np.random.default_rng([cfg.seed, i])
        n = cfg.n_agents
        heading = rng.uniform(0.0, 2.0 * math.pi, size=n)
        speed = rng.uniform(*cfg.speed_range, size=n)
        t_cross = rng.uniform(*cfg.crossing_time, size=n)
        cross = rng.uniform(-cfg.crossing_jitter, cfg.crossing_jitter, size=(n, 2))
        vel = speed[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
        anchors = cross - vel * t_cross[:, None]
        pos = simulate_avoidance(anchors, vel, sim_t, cfg.d_min, cfg.horizon, cfg.deflection,
                                 cfg.lateral_speed, cfg.substeps)[:, 1:]
        if cfg.noise_std > 0:
            pos = pos + rng.normal(0.0, cfg.noise_std, size=pos.shape)
        straight = anchors[:, None, :] + vel[:, None, :] * t[None, :, None]
        deflected = tuple(bool(np.max(np.linalg.norm(pos[a] - straight[a], axis=1)) > 0.5 + 4 * cfg.noise_std)
                          for a in range(n))
        out.append(_episode(cfg, i, list(pos), scene, {"deflected": deflected}))
    return out


def generate_straight_world(cfg):
    if cfg.kind != "straight":
        raise ValueError("generate_straight_world needs kind='straight'")
    (x0, y0) = cfg.grid.origin
    x1 = x0 + cfg.grid.width * cfg.grid.cell_size
    y1 = y0 + cfg.grid.height * cfg.grid.cell_size
    scene = rasterize_semantics([(DRIVABLE, np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]))], cfg.grid)
    t = _times(cfg)
    out = []
    for i in range(cfg.n_episodes):
        rng = np.random.default_rng([cfg.seed, i])
        tracks = []
        for _ in range(cfg.n_agents):
            heading = rng.uniform(0.0, 2.0 * math.pi)
            v = rng.uniform(*cfg.speed_range) * np.array([math.cos(heading), math.sin(heading)])
            start = rng.uniform(-3.0, 3.0, size=2)
            pts = start + t[:, None] * v
            if cfg.noise_std > 0:
                pts = pts + rng.normal(0.0, cfg.noise_std, size=pts.shape)
            tracks.append(pts)
        out.append(_episode(cfg, i, tracks, scene, {}))
    return out


def generate(cfg):
    return {"fork": generate_fork_world,
            "avoidance": generate_avoidance_world,
            "straight": generate_straight_world}[cfg.kind](cfg)
