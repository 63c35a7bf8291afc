import numpy as np
import pytest

from hypotraj import forge, model
from hypotraj.forge import GridSpec, WorldConfig
from hypotraj.model import ModelConfig

TINY = dict(h_enc=4, d_z=3, conv_channels=3, recog_hidden=4, dec1_input=2, h_dec=4, vel_embed=3,
            cnn_features=2, n_rings=2, n_wedges=4)
SMALL_GRID = GridSpec(8, 8, 2.5, (-10.0, -10.0))


def tiny_config(**kw):
    return ModelConfig(**{**TINY, **kw})


def zero_params(store):
    for _, p in store.items():
        p.data = np.zeros_like(p.data)


def world(kind="fork", n=4, agents=1, **kw):
    return forge.generate(WorldConfig(kind=kind, n_episodes=n, n_agents=agents, grid=SMALL_GRID, **kw))


@pytest.fixture
def fork_batch():
    return model.make_batch(world(n=3))


@pytest.fixture
def pair_batch():
    return model.make_batch(world("avoidance", n=2, agents=2))


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_lines():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
