"""INI run configuration with strict key checking.

Sections and their keys mirror the dataclass fields they fill::

    [world]    WorldConfig fields; the grid is given as grid_height,
               grid_width, grid_cell_size and grid_origin ("x y")
    [model]    ModelConfig overrides (horizons and channels default to the data)
    [train]    TrainConfig fields
    [eval]     k, n_iters, folds, split_seed, oracle_fraction, threshold, batch_size
    [gradcheck] n_agents, k, delta, eps, tolerance, max_entries

Tuples are written as space- or comma-separated numbers. Unknown sections
or keys are rejected.
"""

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .forge import GridSpec, WorldConfig
from .model import ModelConfig, default_config_for
from .train import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration file or value."""


@dataclass
class EvalConfig:
    k: int = 50
    n_iters: int = 4
    folds: int = 5
    split_seed: int = 0
    oracle_fraction: float = 0.1
    threshold: float = 1.0
    batch_size: int = 32


@dataclass
class GradcheckConfig:
    n_agents: int = 2
    k: int = 2
    delta: int = 3
    eps: float = 1e-5
    tolerance: float = 1e-4
    max_entries: int = 24


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    def to_dict(self):
        w = asdict(self.world)
        grid = w.pop("grid")
        w.update({f"grid_{k}": v for k, v in grid.items()})
        return {"world": w, "model": dict(self.model), "train": asdict(self.train),
                "eval": asdict(self.eval), "gradcheck": asdict(self.gradcheck)}

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def model_config(self, episodes):
        return default_config_for(episodes, variant=self.train.variant, **self.model)


def _parse(raw, default, where):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(t) for t in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _fill(cls, items, section, extra=()):
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls) if f.name not in extra}
    out = {}
    for key, raw in items:
        if key not in defaults:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        out[key] = _parse(raw, defaults[key], f"[{section}] {key}")
    return out


_MODEL_DEFAULTS = {f.name: getattr(ModelConfig(), f.name) for f in fields(ModelConfig)}
_GRID_KEYS = {"grid_height": "height", "grid_width": "width", "grid_cell_size": "cell_size",
              "grid_origin": "origin"}


def parse_config(text, source="<config>"):
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(" ".join(str(exc).split())) from None
    known = {"world", "model", "train", "eval", "gradcheck"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    cfg = RunConfig()
    try:
        if cp.has_section("world"):
            items = dict(cp.items("world"))
            grid_items = {k: items.pop(k) for k in list(items) if k in _GRID_KEYS}
            world = _fill(WorldConfig, items.items(), "world", extra=("grid",))
            g = GridSpec()
            grid = {_GRID_KEYS[k]: _parse(v, getattr(g, _GRID_KEYS[k]), f"[world] {k}")
                    for k, v in grid_items.items()}
            if "origin" in grid and len(grid["origin"]) != 2:
                raise ConfigError("[world] grid_origin needs two numbers")
            cfg.world = WorldConfig(**world, grid=replace(g, **grid))
        if cp.has_section("model"):
            model = {}
            for key, raw in cp.items("model"):
                if key not in _MODEL_DEFAULTS:
                    raise ConfigError(f"[model] unknown key {key!r}")
                model[key] = _parse(raw, _MODEL_DEFAULTS[key], f"[model] {key}")
            ModelConfig(**model)
            cfg.model = model
        if cp.has_section("train"):
            cfg.train = TrainConfig(**_fill(TrainConfig, cp.items("train"), "train"))
        if cp.has_section("eval"):
            cfg.eval = EvalConfig(**_fill(EvalConfig, cp.items("eval"), "eval"))
        if cp.has_section("gradcheck"):
            cfg.gradcheck = GradcheckConfig(**_fill(GradcheckConfig, cp.items("gradcheck"), "gradcheck"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
