import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypotraj import forge, scene
from hypotraj.scene import AgentTrack, Episode, EpisodeFormatError, SceneGrid


def tiny_episode(future_len=3, n_agents=2, video="v0"):
    rng = np.random.default_rng(future_len * 10 + n_agents)
    grid = SceneGrid(rng.random((3, 4, 2)), 0.5, (-1.0, -0.75))
    agents = [AgentTrack(f"a{i}", rng.normal(size=(2, 2)), rng.normal(size=(future_len, 2)))
              for i in range(n_agents)]
    return Episode("ep1", video, 0.5, 2, 3, agents, grid)


def same(a, b):
    assert (a.episode_id, a.video, a.dt, a.iota, a.delta) == (b.episode_id, b.video, b.dt, b.iota, b.delta)
    np.testing.assert_array_equal(a.scene.values, b.scene.values)
    assert a.scene.origin == b.scene.origin and a.scene.cell_size == b.scene.cell_size
    assert [x.agent_id for x in a.agents] == [x.agent_id for x in b.agents]
    for x, y in zip(a.agents, b.agents):
        np.testing.assert_array_equal(x.past, y.past)
        np.testing.assert_array_equal(x.future, y.future)


class TestFormat:
    def test_round_trip_is_bit_exact(self, tmp_path):
        ep = tiny_episode()
        scene.save_episode(ep, tmp_path / "e.ep")
        same(ep, scene.load_episode(tmp_path / "e.ep"))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False), min_size=4, max_size=4))
    def test_round_trip_arbitrary_reals(self, vals):
        grid = SceneGrid(np.zeros((1, 1, 1)), 1.0, (0.0, 0.0))
        ep = Episode("e", "v", 0.25, 1, 1, [AgentTrack("a", [vals[:2]], [vals[2:]])], grid)
        same(ep, scene.parse_episode(scene.format_episode(ep)))

    def test_partial_future_keeps_valid_len(self):
        ep = scene.parse_episode(scene.format_episode(tiny_episode(future_len=1)))
        assert list(ep.valid_lens()) == [1, 1]
        np.testing.assert_array_equal(ep.futures()[0], np.repeat(ep.agents[0].future, 3, axis=0))

    def test_load_directory_sorted(self, tmp_path):
        eps = forge.generate(forge.WorldConfig(n_episodes=3, grid=forge.GridSpec(8, 8)))
        scene.save_episodes(eps[::-1], tmp_path)
        assert [e.episode_id for e in scene.load_episodes(tmp_path)] == [e.episode_id for e in eps]

    @pytest.mark.parametrize("mutate, message", [
        (lambda t: t.replace("episode ep1", "episod ep1"), "expected header"),
        (lambda t: t.replace("grid 3 4 2", "grid 3 4"), "grid line"),
        (lambda t: "\n".join(t.splitlines()[:5]), "truncated"),
        (lambda t: t.replace("agent a1", "agent a0"), "duplicate agent"),
        (lambda t: t.replace("past", "pats", 1), "unknown record"),
        (lambda t: t + "future 1 2\nfuture 1 2\n", "future length"),
        (lambda t: t.replace("future", "future nan", 1), "expected 2 values"),
        (lambda t: t + "future inf 0\n", "non-finite"),
    ])
    def test_errors_name_the_problem(self, mutate, message):
        text = mutate(scene.format_episode(tiny_episode()))
        with pytest.raises(EpisodeFormatError, match=message):
            scene.parse_episode(text, "x.ep")

    def test_error_carries_line_number(self):
        lines = scene.format_episode(tiny_episode()).splitlines()
        lines[-1] = "future 1.0 oops"
        with pytest.raises(EpisodeFormatError) as info:
            scene.parse_episode("\n".join(lines), "x.ep")
        assert info.value.line == len(lines)
        assert str(info.value).startswith(f"x.ep:{len(lines)}:")

    def test_save_rejects_invalid_without_writing(self, tmp_path):
        ep = tiny_episode()
        bad = Episode(ep.episode_id, ep.video, -1.0, ep.iota, ep.delta, ep.agents, ep.scene)
        with pytest.raises(EpisodeFormatError, match="dt"):
            scene.save_episode(bad, tmp_path / "bad.ep")
        assert list(tmp_path.iterdir()) == []


class TestValidate:
    def test_rejects_short_past(self):
        ep = tiny_episode()
        a = AgentTrack("a0", np.zeros((1, 2)), np.zeros((1, 2)))
        with pytest.raises(EpisodeFormatError, match="past length"):
            scene.validate(Episode("e", "v", 0.5, 2, 3, [a], ep.scene))

    def test_rejects_whitespace_ids(self):
        ep = tiny_episode()
        with pytest.raises(EpisodeFormatError, match="episode id"):
            scene.validate(Episode("a b", "v", 0.5, 2, 3, ep.agents, ep.scene))

    def test_rejects_empty(self):
        ep = tiny_episode()
        with pytest.raises(EpisodeFormatError, match="no agents"):
            scene.validate(Episode("e", "v", 0.5, 2, 3, [], ep.scene))


class TestGeometry:
    def test_normalize_puts_reference_at_origin(self):
        ep = tiny_episode()
        nep, tr = scene.normalize(ep)
        np.testing.assert_array_equal(nep.agents[0].past[-1], [0.0, 0.0])
        back = scene.denormalize(nep, tr)
        for a, b in zip(ep.agents, back.agents):
            np.testing.assert_allclose(a.future, b.future, atol=1e-12)
        np.testing.assert_allclose(back.scene.origin, ep.scene.origin, atol=1e-12)

    def test_rotate_points_quarter_turn(self):
        np.testing.assert_allclose(scene.rotate_points([[1.0, 0.0]], math.pi / 2), [[0.0, 1.0]],
                                   atol=1e-15)

    def test_rotation_keeps_grid_extent_and_one_hot(self):
        ep = forge.generate(forge.WorldConfig(n_episodes=1))[0]
        rot = scene.rotate_augment(ep, 0.7)
        assert rot.scene.values.shape == ep.scene.values.shape
        assert rot.scene.origin == ep.scene.origin
        s = rot.scene.values.sum(axis=-1)
        assert set(np.unique(s)) <= {0.0, 1.0}

    def test_rotation_preserves_distances(self):
        ep = tiny_episode()
        rot = scene.rotate_augment(ep, 1.1, pivot=(0.3, -0.2))
        for a, b in zip(ep.agents, rot.agents):
            np.testing.assert_allclose(np.linalg.norm(np.diff(a.past, axis=0), axis=1),
                                       np.linalg.norm(np.diff(b.past, axis=0), axis=1), atol=1e-12)

    def test_zero_rotation_is_identity(self):
        ep = tiny_episode()
        same(ep, scene.rotate_augment(ep, 0.0))

    def test_cell_of_uses_grid_origin(self):
        g = SceneGrid(np.zeros((2, 2, 1)), 1.0, (-1.0, -1.0))
        np.testing.assert_array_equal(g.cell_of(np.array([[-0.5, -0.5], [0.5, 0.5], [2.0, 0.0]])),
                                      [0, 3, -1])


class TestSplits:
    eps = forge.generate(forge.WorldConfig(n_episodes=40, n_videos=8, grid=forge.GridSpec(4, 4)))

    def test_folds_are_video_disjoint_and_cover(self):
        folds = scene.split_cross_validation(self.eps, 4, seed=3)
        seen = []
        for train, test in folds:
            assert {e.video for e in train}.isdisjoint({e.video for e in test})
            assert len(train) + len(test) == len(self.eps)
            seen += [e.episode_id for e in test]
        assert sorted(seen) == sorted(e.episode_id for e in self.eps)

    def test_deterministic_under_seed(self):
        a = scene.split_cross_validation(self.eps, 4, seed=1)
        b = scene.split_cross_validation(self.eps, 4, seed=1)
        assert [[e.episode_id for e in t] for _, t in a] == [[e.episode_id for e in t] for _, t in b]

    def test_needs_enough_videos(self):
        with pytest.raises(ValueError, match="distinct videos"):
            scene.split_cross_validation(self.eps, 9)
