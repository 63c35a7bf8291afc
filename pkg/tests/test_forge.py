import math

import numpy as np
import pytest

from hypotraj import forge, scene
from hypotraj.forge import GridSpec, WorldConfig

SMALL_GRID = GridSpec(16, 16, 2.5, (-20.0, -20.0))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(kind="maze"), dict(n_agents=0), dict(noise_std=-1.0),
                                    dict(branch_probs=(0.7, 0.7))])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            WorldConfig(**kw)

    def test_generator_checks_kind(self):
        with pytest.raises(ValueError):
            forge.generate_fork_world(WorldConfig(kind="straight"))


class TestDeterminism:
    @pytest.mark.parametrize("kind, n", [("fork", 1), ("avoidance", 3), ("straight", 2)])
    def test_same_config_same_bytes(self, kind, n):
        cfg = WorldConfig(kind=kind, n_agents=n, n_episodes=4, grid=SMALL_GRID)
        a = [scene.format_episode(e) for e in forge.generate(cfg)]
        b = [scene.format_episode(e) for e in forge.generate(cfg)]
        assert a == b

    def test_episode_does_not_depend_on_count(self):
        a = forge.generate(WorldConfig(n_episodes=3, grid=SMALL_GRID))
        b = forge.generate(WorldConfig(n_episodes=6, grid=SMALL_GRID))
        np.testing.assert_array_equal(a[2].pasts(), b[2].pasts())

    def test_output_validates(self):
        for ep in forge.generate(WorldConfig(kind="avoidance", n_agents=3, n_episodes=3, grid=SMALL_GRID)):
            scene.validate(ep)


class TestFork:
    def test_branch_frequency(self):
        cfg = WorldConfig(n_episodes=10_000, grid=GridSpec(2, 2, 1.0, (0.0, 0.0)))
        freq = np.mean([ep.meta["branches"][0] for ep in forge.generate(cfg)])
        assert abs(freq - 0.5) <= 0.02

    def test_single_branch_zero_noise_is_deterministic_geometry(self):
        cfg = WorldConfig(n_episodes=20, noise_std=0.0, branch_probs=(1.0, 0.0), grid=SMALL_GRID)
        for ep in forge.generate(cfg):
            a = ep.agents[0]
            assert ep.meta["branches"] == (0,)
            last = a.future[-1]
            lane = a.past[-1, 1]
            # lands on the +35 degree branch line through (0, lane)
            assert math.isclose(math.atan2(last[1] - lane, last[0]), cfg.branch_angle, abs_tol=1e-9)

    def test_identical_pasts_can_diverge(self):
        cfg = WorldConfig(n_episodes=400, noise_std=0.0, grid=SMALL_GRID)
        finals = np.array([ep.agents[0].future[-1, 1] - ep.agents[0].past[-1, 1]
                           for ep in forge.generate(cfg)])
        assert (finals > 1.0).any() and (finals < -1.0).any()

    def test_rasterized_areas(self):
        g = GridSpec(80, 80, 0.5, (-20.0, -20.0))
        cfg = WorldConfig(grid=g)
        sg = forge.rasterize_semantics(forge.fork_geometry(cfg), g)
        cells = sg.values[..., forge.DRIVABLE].sum() * g.cell_size ** 2
        # corridor 20 m x 4 m inside the window plus two 4 m wide branches, overlapping near the junction
        assert 80.0 + 2 * 4.0 * 15.0 < cells < 80.0 + 2 * 4.0 * 25.0
        np.testing.assert_array_equal(sg.values.sum(axis=-1), 1.0)

    def test_rasterize_square(self):
        g = GridSpec(4, 4, 1.0, (0.0, 0.0))
        sg = forge.rasterize_semantics([(1, np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]))], g)
        assert sg.values[..., 1].sum() == 4.0
        assert sg.values[:2, :2, 1].all()


class TestAvoidance:
    def test_head_on_clears_d_min(self):
        t = np.arange(-4.0, 8.0, 0.5)
        v = np.array([[3.0, 0.0], [-3.0, 0.0]])
        anchors = np.array([[-12.0, 0.0], [12.0, 0.0]])
        pos = forge.simulate_avoidance(anchors, v, t, 2.0, 1.5, 2.0, 1.5, substeps=20)
        gap = np.linalg.norm(pos[0] - pos[1], axis=1)
        assert gap.min() >= 2.0

    def test_no_conflict_means_straight_lines(self):
        t = np.arange(0.0, 4.0, 0.5)
        v = np.array([[1.0, 0.0], [1.0, 0.0]])
        anchors = np.array([[0.0, 0.0], [0.0, 10.0]])
        pos = forge.simulate_avoidance(anchors, v, t, 2.0, 1.5, 2.0, 1.5)
        np.testing.assert_allclose(pos, anchors[:, None] + v[:, None] * t[None, :, None])

    def test_deflection_is_to_the_right(self):
        t = np.arange(0.0, 6.0, 0.5)
        v = np.array([[2.0, 0.0], [-2.0, 0.0]])
        pos = forge.simulate_avoidance(np.array([[-6.0, 0.0], [6.0, 0.0]]), v, t, 2.0, 1.5, 2.0, 1.5)
        assert pos[0, -1, 1] == pytest.approx(-2.0)
        assert pos[1, -1, 1] == pytest.approx(2.0)

    def test_future_depends_on_other_agent(self):
        t = np.arange(0.0, 6.0, 0.5)
        v = np.array([[2.0, 0.0], [-2.0, 0.0]])
        anchors = np.array([[-6.0, 0.0], [6.0, 0.0]])
        both = forge.simulate_avoidance(anchors, v, t, 2.0, 1.5, 2.0, 1.5)
        alone = forge.simulate_avoidance(anchors[:1], v[:1], t, 2.0, 1.5, 2.0, 1.5)
        assert not np.allclose(both[0], alone[0])
        np.testing.assert_allclose(alone[0], anchors[0] + v[0] * t[:, None])

    def test_triggers_fall_in_the_future(self):
        cfg = WorldConfig(kind="avoidance", n_agents=2, n_episodes=300, noise_std=0.0, grid=SMALL_GRID)
        eps = forge.generate(cfg)
        frac = np.mean([ep.meta["deflected"] for ep in eps])
        assert 0.3 < frac < 0.7
        # nearly every observed past is still a straight constant-velocity line
        bent = [np.abs(np.diff(a.past, 2, axis=0)).max() > 1e-9 for ep in eps for a in ep.agents]
        assert np.mean(bent) < 0.05
