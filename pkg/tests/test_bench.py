import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypotraj import bench
from hypotraj.bench import BenchConfig
from hypotraj.ioc import RankedSet

from conftest import world


def brute_max_l2(pred, gt, n):
    return max(math.hypot(pred[t][0] - gt[t][0], pred[t][1] - gt[t][1]) for t in range(n))


class TestMetrics:
    def test_three_four_five(self):
        pred = np.array([[3.0, 4.0]])
        assert bench.metric_l2_at(pred, np.zeros((1, 2)), 1) == 5.0

    def test_missrate(self):
        preds = np.array([[[0.5, 0.0]], [[1.5, 0.0]]])
        assert bench.metric_missrate_at(preds, np.zeros_like(preds), 1) == 0.5

    def test_missrate_threshold_is_strict(self):
        preds = np.array([[[1.0, 0.0]]])
        assert bench.metric_missrate_at(preds, np.zeros_like(preds), 1) == 0.0

    def test_max_l2(self):
        pred = np.array([[0.2, 0.0], [0.9, 0.0], [0.4, 0.0]])
        assert bench.metric_max_l2(pred, np.zeros_like(pred)) == 0.9

    def test_max_l2_ignores_unlabeled(self):
        pred = np.array([[[0.2, 0.0], [0.9, 0.0], [0.4, 0.0]]])
        assert bench.metric_max_l2(pred, np.zeros_like(pred), valid_len=[1])[0] == 0.2

    def test_oracle(self):
        offsets = np.array([5.0, 2.0, 9.0])
        trajs = np.zeros((1, 3, 1, 2))
        trajs[0, :, 0, 0] = offsets
        ranked = RankedSet(trajs, np.zeros((1, 3)), np.array([[2, 1, 0]]))
        # rank order gives errors (9, 2, 5)
        assert bench.metric_oracle_topk(ranked, np.zeros((1, 1, 2)), 1)[0] == 9.0
        assert bench.metric_oracle_topk(ranked, np.zeros((1, 1, 2)), 2)[0] == 2.0

    def test_oracle_on_plain_array(self):
        errs = np.array([5.0, 2.0, 9.0])
        trajs = np.zeros((3, 1, 2))
        trajs[:, 0, 0] = errs
        assert bench.metric_oracle_topk(trajs, np.zeros((1, 2)), 2) == 2.0

    def test_oracle_k(self):
        assert bench.oracle_k(0.1, 50) == 5
        assert bench.oracle_k(0.1, 5) == 1
        assert bench.oracle_k(1.0, 7) == 7
        with pytest.raises(ValueError):
            bench.oracle_k(0.0, 5)

    def test_horizon_step(self):
        assert bench.horizon_step(2, 0.5) == 4
        with pytest.raises(ValueError):
            bench.horizon_step(1, 0.3)

    def test_random_cases_match_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            t = int(rng.integers(1, 9))
            n = int(rng.integers(1, t + 1))
            pred, gt = rng.normal(size=(t, 2)) * 3, rng.normal(size=(t, 2)) * 3
            got = bench.metric_max_l2(pred[None], gt[None], valid_len=[n])[0]
            assert abs(got - brute_max_l2(pred, gt, n)) <= 1e-9
            step = int(rng.integers(1, t + 1))
            assert abs(bench.metric_l2_at(pred, gt, step)
                       - math.hypot(*(pred[step - 1] - gt[step - 1]))) <= 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_oracle_nonincreasing_in_k(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 12))
        ranked = RankedSet.build(rng.normal(size=(2, k, 4, 2)), rng.normal(size=(2, k)))
        gt = rng.normal(size=(2, 4, 2))
        vals = [bench.metric_oracle_topk(ranked, gt, j) for j in range(1, k + 1)]
        for a, b in zip(vals, vals[1:]):
            assert np.all(b <= a)
        np.testing.assert_array_equal(vals[-1], bench.sample_errors(ranked, gt).min(axis=-1))

    def test_random_order_keeps_samples(self):
        rng = np.random.default_rng(1)
        ranked = RankedSet.build(rng.normal(size=(3, 5, 2, 2)), rng.normal(size=(3, 5)))
        shuffled = bench.random_order(ranked, np.random.default_rng(0))
        np.testing.assert_array_equal(np.sort(shuffled.ranking, axis=1), np.tile(np.arange(5), (3, 1)))
        assert shuffled.trajectories is ranked.trajectories


class OffsetNet:
    """Returns the ground truth shifted by fixed per-sample offsets along x."""

    def __init__(self, offsets):
        self.offsets = np.asarray(offsets, dtype=np.float64)

    def predict(self, batch, k, n_iters, rng):
        trajs = np.repeat(batch.future[:, None], k, axis=1).copy()
        trajs[..., 0] += self.offsets[:k, None]
        return RankedSet.build(trajs, -np.arange(k, dtype=np.float64)[None].repeat(batch.n_agents, 0))


class TestRunBenchmark:
    def test_hand_aggregation(self):
        eps = world(n=2)
        cfg = BenchConfig(k=4, oracle_fraction=0.5, horizons_s=(1, 2))
        report = bench.run_benchmark({"m": [(OffsetNet([0.5, 2.0, 0.25, 3.0]), 0)]}, [eps], cfg)
        # top-1 is offset 0.5 on every step of both episodes
        assert report.value("m", "l2", "1s") == 0.5
        assert report.value("m", "l2", "2s", fold=0) == 0.5
        assert report.value("m", "missrate", "1s") == 0.0
        assert report.value("m", "max_l2") == 0.5
        assert report.value("m", "oracle50%_max_l2") == 0.5
        assert report.value("m", "best_max_l2") == 0.25
        curve = dict(report.curves["m"])
        assert curve[0.25] == 0.5 and curve[1.0] == 0.25

    def test_fold_mean_is_mean_of_fold_means(self):
        a, b = world(n=2, seed=1), world(n=3, seed=2)
        cfg = BenchConfig(k=2, horizons_s=(1,))
        nets = [(OffsetNet([1.0, 0.0]), 0), (OffsetNet([3.0, 0.0]), 0)]
        report = bench.run_benchmark({"m": nets}, [a, b], cfg)
        assert report.value("m", "max_l2") == 2.0
        assert report.value("m", "max_missrate") == 0.5

    def test_fold_count_mismatch(self):
        with pytest.raises(ValueError):
            bench.run_benchmark({"m": [(OffsetNet([0.0]), 0)]}, [world(n=1), world(n=1)], BenchConfig(k=1))

    def test_report_is_deterministic(self, tmp_path):
        from hypotraj.baselines import LinearBaseline
        from hypotraj.model import default_config_for
        eps = world(n=5)
        net = LinearBaseline(default_config_for(eps))
        cfg = BenchConfig(k=3)
        r1 = bench.run_benchmark({"linear": [(net, 0)]}, [eps], cfg)
        r2 = bench.run_benchmark({"linear": [(net, 0)]}, [eps], cfg)
        assert r1.to_csv() == r2.to_csv() and r1.to_table() == r2.to_table()
        paths = r1.write(tmp_path)
        assert [p.name for p in paths] == ["report.txt", "report.csv", "oracle_curve_linear.csv"]
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0] == "model,fold,metric,horizon,value"
        assert all(len(row.split(",")) == 5 for row in lines)

    def test_fmean(self):
        assert bench.fmean([1e16, 1.0, -1e16]) == pytest.approx(1.0 / 3)
        assert math.isnan(bench.fmean([]))
