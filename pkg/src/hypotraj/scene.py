"""Episodes, scene grids and the line-oriented episode file format.

File layout, one episode per file::

    episode <id> <video> <dt> <iota> <delta>
    grid <H> <W> <C> <cell_size> <origin_x> <origin_y>
    <C reals>                      # H*W lines, row-major (row follows y)
    agent <id>
    past <x> <y>                   # exactly iota lines, oldest first
    future <x> <y>                 # 1..delta lines
    ...                            # further agent blocks

Reals are written with 17 significant digits so a save/load round trip is
bit-exact.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .fileio import atomic_write_text

EPISODE_SUFFIX = ".ep"


class EpisodeFormatError(ValueError):
    """A malformed or invariant-violating episode record."""

    def __init__(self, msg, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + msg)
        self.path = path
        self.line = line


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SceneGrid:
    """H x W x C feature map; cell (r, c) covers x in (ox + c*s, ox + (c+1)*s]
    and y in (oy + r*s, oy + (r+1)*s] (the grid's lower edges are closed)."""

    values: np.ndarray
    cell_size: float
    origin: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]

    def cell_of(self, points):
        """Flat cell index per point, -1 outside the grid."""
        return kernels.nearest_cell(points, self.origin, self.cell_size, self.height, self.width)

    def cell_centers(self):
        cols, rows = np.meshgrid(np.arange(self.width), np.arange(self.height))
        x = self.origin[0] + (cols + 0.5) * self.cell_size
        y = self.origin[1] + (rows + 0.5) * self.cell_size
        return np.stack([x, y], axis=-1)


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """Past (iota x 2) and labeled future (valid_len x 2) of one agent, meters."""

    agent_id: str
    past: np.ndarray
    future: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "past", _frozen(self.past).reshape(-1, 2))
        object.__setattr__(self, "future", _frozen(self.future).reshape(-1, 2))

    @property
    def valid_len(self):
        return self.future.shape[0]

    def future_padded(self, delta):
        """Future of length ``delta``, unlabeled steps repeat the last label."""
        f = self.future
        if f.shape[0] >= delta:
            return np.array(f[:delta])
        pad = np.repeat(f[-1:], delta - f.shape[0], axis=0)
        return np.concatenate([f, pad], axis=0)


@dataclass(frozen=True, eq=False)
class Episode:
    episode_id: str
    video: str
    dt: float
    iota: int
    delta: int
    agents: tuple
    scene: SceneGrid
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))

    @property
    def n_agents(self):
        return len(self.agents)

    def pasts(self):
        return np.stack([a.past for a in self.agents])

    def futures(self):
        return np.stack([a.future_padded(self.delta) for a in self.agents])

    def valid_lens(self):
        return np.array([a.valid_len for a in self.agents], dtype=np.int64)


def _check_token(tok, what, path=None, line=None):
    if not tok or any(c.isspace() for c in tok):
        raise EpisodeFormatError(f"{what} must be a non-empty token without whitespace", path, line)


def validate(ep, path=None):
    """Raise :class:`EpisodeFormatError` unless every invariant holds."""
    _check_token(ep.episode_id, "episode id", path)
    _check_token(ep.video, "video tag", path)
    if not (ep.dt > 0 and math.isfinite(ep.dt)):
        raise EpisodeFormatError(f"dt must be positive, got {ep.dt}", path)
    if ep.iota < 1 or ep.delta < 1:
        raise EpisodeFormatError("iota and delta must be >= 1", path)
    g = ep.scene
    if g is None:
        raise EpisodeFormatError("missing grid", path)
    if g.values.ndim != 3 or min(g.values.shape) < 1:
        raise EpisodeFormatError(f"grid values must be H x W x C with C >= 1, got {g.values.shape}", path)
    if not (g.cell_size > 0 and math.isfinite(g.cell_size)):
        raise EpisodeFormatError(f"cell_size must be positive, got {g.cell_size}", path)
    if not (np.all(np.isfinite(g.values)) and all(math.isfinite(o) for o in g.origin)):
        raise EpisodeFormatError("non-finite grid value", path)
    if not ep.agents:
        raise EpisodeFormatError("episode has no agents", path)
    seen = set()
    for a in ep.agents:
        _check_token(a.agent_id, "agent id", path)
        if a.agent_id in seen:
            raise EpisodeFormatError(f"duplicate agent id {a.agent_id!r}", path)
        seen.add(a.agent_id)
        if a.past.shape[0] != ep.iota:
            raise EpisodeFormatError(
                f"agent {a.agent_id}: past length {a.past.shape[0]} != iota {ep.iota}", path)
        if not 1 <= a.valid_len <= ep.delta:
            raise EpisodeFormatError(
                f"agent {a.agent_id}: future length {a.valid_len} outside [1, {ep.delta}]", path)
        if not (np.all(np.isfinite(a.past)) and np.all(np.isfinite(a.future))):
            raise EpisodeFormatError(f"agent {a.agent_id}: non-finite coordinate", path)
    return ep


# -- serialisation ----------------------------------------------------------


def _f(x):
    return format(float(x), ".17g")


def format_episode(ep):
    g = ep.scene
    lines = [f"episode {ep.episode_id} {ep.video} {_f(ep.dt)} {ep.iota} {ep.delta}",
             f"grid {g.height} {g.width} {g.channels} {_f(g.cell_size)} "
             f"{_f(g.origin[0])} {_f(g.origin[1])}"]
    flat = g.values.reshape(-1, g.channels)
    lines.extend(" ".join(_f(v) for v in row) for row in flat)
    for a in ep.agents:
        lines.append(f"agent {a.agent_id}")
        lines.extend(f"past {_f(x)} {_f(y)}" for x, y in a.past)
        lines.extend(f"future {_f(x)} {_f(y)}" for x, y in a.future)
    return "\n".join(lines) + "\n"


def save_episode(ep, path):
    validate(ep)
    atomic_write_text(path, format_episode(ep))


def save_episodes(episodes, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for ep in episodes:
        p = directory / f"{ep.episode_id}{EPISODE_SUFFIX}"
        save_episode(ep, p)
        paths.append(p)
    return paths


def _reals(tokens, n, path, lineno, what):
    if len(tokens) != n:
        raise EpisodeFormatError(f"{what}: expected {n} values, got {len(tokens)}", path, lineno)
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise EpisodeFormatError(f"{what}: unparsable number", path, lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise EpisodeFormatError(f"{what}: non-finite value", path, lineno)
    return vals


def parse_episode(text, path=None):
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            return None, None
        pos += 1
        return lines[pos - 1].split(), pos

    head, ln = next_line()
    if head is None or head[0] != "episode" or len(head) != 6:
        raise EpisodeFormatError("expected header 'episode <id> <video> <dt> <iota> <delta>'", path, ln or 1)
    try:
        ep_id, video = head[1], head[2]
        dt = float(head[3])
        iota, delta = int(head[4]), int(head[5])
    except ValueError:
        raise EpisodeFormatError("bad header field", path, ln) from None
    g, ln = next_line()
    if g is None or g[0] != "grid":
        raise EpisodeFormatError("missing grid", path, ln or pos)
    if len(g) != 7:
        raise EpisodeFormatError("grid line needs H W C cell_size origin_x origin_y", path, ln)
    try:
        h, w, c = int(g[1]), int(g[2]), int(g[3])
    except ValueError:
        raise EpisodeFormatError("bad grid dimensions", path, ln) from None
    if h < 1 or w < 1 or c < 1:
        raise EpisodeFormatError("grid dimensions must be positive", path, ln)
    cell_size, ox, oy = _reals(g[4:], 3, path, ln, "grid")
    grid_start = pos
    rows = []
    for _ in range(h * w):
        if pos >= len(lines):
            raise EpisodeFormatError(f"grid block truncated: expected {h * w} rows", path, pos)
        toks = lines[pos].split()
        pos += 1
        if len(toks) != c or (toks and not _is_number(toks[0])):
            raise EpisodeFormatError(f"grid row needs {c} reals", path, pos)
        rows.append(toks)
    try:
        values = np.array(rows, dtype=np.float64).reshape(h, w, c)
    except ValueError:
        raise EpisodeFormatError("unparsable grid value", path, grid_start + 1) from None
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values.reshape(h * w, c)).any(axis=1))[0])
        raise EpisodeFormatError("non-finite grid value", path, grid_start + bad + 1)
    agents = []
    cur = None
    while True:
        toks, ln = next_line()
        if toks is None:
            break
        kind = toks[0]
        if kind == "agent":
            if len(toks) != 2:
                raise EpisodeFormatError("agent line needs one id", path, ln)
            if cur is not None:
                agents.append(cur)
            cur = (toks[1], [], [], ln)
        elif kind in ("past", "future"):
            if cur is None:
                raise EpisodeFormatError(f"'{kind}' before any agent", path, ln)
            xy = _reals(toks[1:], 2, path, ln, kind)
            if kind == "past":
                if cur[2]:
                    raise EpisodeFormatError("past point after future points", path, ln)
                cur[1].append(xy)
            else:
                cur[2].append(xy)
        else:
            raise EpisodeFormatError(f"unknown record {kind!r}", path, ln)
    if cur is not None:
        agents.append(cur)
    tracks = []
    ids = set()
    for aid, past, fut, ln in agents:
        if aid in ids:
            raise EpisodeFormatError(f"duplicate agent id {aid!r}", path, ln)
        ids.add(aid)
        if len(past) != iota:
            raise EpisodeFormatError(f"agent {aid}: past length {len(past)} != iota {iota}", path, ln)
        if not 1 <= len(fut) <= delta:
            raise EpisodeFormatError(f"agent {aid}: future length {len(fut)} outside [1, {delta}]", path, ln)
        tracks.append(AgentTrack(aid, np.array(past), np.array(fut)))
    ep = Episode(ep_id, video, dt, iota, delta, tuple(tracks),
                 SceneGrid(values, cell_size, (ox, oy)))
    return validate(ep, path)


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_episode(path):
    with open(path, encoding="ascii") as fh:
        return parse_episode(fh.read(), path)


def load_episodes(path):
    """Load every ``*.ep`` file in a directory, sorted by file name."""
    path = Path(path)
    if path.is_file():
        return [load_episode(path)]
    return [load_episode(p) for p in sorted(path.glob(f"*{EPISODE_SUFFIX}"))]


# -- geometry ---------------------------------------------------------------


@dataclass(frozen=True)
class Translation:
    """World -> normalized frame: ``p - offset``."""

    offset: tuple

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) - np.asarray(self.offset)

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) + np.asarray(self.offset)


def _map_points(ep, fn, scene):
    agents = tuple(AgentTrack(a.agent_id, fn(a.past), fn(a.future)) for a in ep.agents)
    return replace(ep, agents=agents, scene=scene)


def normalize(ep, ref=0):
    """Translate so agent ``ref``'s last past point is the origin."""
    offset = tuple(float(v) for v in ep.agents[ref].past[-1])
    tr = Translation(offset)
    g = ep.scene
    scene = SceneGrid(g.values, g.cell_size, tuple(tr.apply(g.origin)))
    return _map_points(ep, tr.apply, scene), tr


def denormalize(ep, tr):
    g = ep.scene
    scene = SceneGrid(g.values, g.cell_size, tuple(tr.invert(g.origin)))
    return _map_points(ep, tr.invert, scene)


def rotate_points(points, angle, pivot=(0.0, 0.0)):
    p = np.asarray(points, dtype=np.float64) - np.asarray(pivot)
    c, s = math.cos(angle), math.sin(angle)
    out = np.empty_like(p)
    out[..., 0] = c * p[..., 0] - s * p[..., 1]
    out[..., 1] = s * p[..., 0] + c * p[..., 1]
    return out + np.asarray(pivot)


def rotate_augment(ep, angle, pivot=(0.0, 0.0)):
    """Rotate trajectories about ``pivot``; resample the grid by nearest cell.

    The grid keeps its extent and origin; cells whose preimage falls outside
    the original grid are zero in every channel.
    """
    if angle == 0.0:
        return _map_points(ep, lambda p: np.array(p), ep.scene)
    g = ep.scene
    vals = kernels.rotate_nearest(g.values, g.origin, g.cell_size, float(angle),
                                  (float(pivot[0]), float(pivot[1])))
    scene = SceneGrid(vals, g.cell_size, g.origin)
    return _map_points(ep, lambda p: rotate_points(p, angle, pivot), scene)


# -- splits -----------------------------------------------------------------


def split_cross_validation(episodes, folds=5, seed=0):
    """Video-disjoint folds: list of (train, test) episode lists."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    videos = sorted({ep.video for ep in episodes})
    if len(videos) < folds:
        raise ValueError(f"need at least {folds} distinct videos, found {len(videos)}")
    rng = np.random.default_rng(seed)
    order = [videos[i] for i in rng.permutation(len(videos))]
    fold_of = {v: i % folds for i, v in enumerate(order)}
    out = []
    for f in range(folds):
        test = [ep for ep in episodes if fold_of[ep.video] == f]
        train = [ep for ep in episodes if fold_of[ep.video] != f]
        out.append((train, test))
    return out
