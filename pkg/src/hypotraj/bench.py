"""Prediction metrics, oracle error and the cross-validated benchmark.

Errors are pointwise Euclidean distances in metres. Horizons are given
in seconds and converted to 1-based step indices with the episode ``dt``.
Steps beyond an agent's labeled future are excluded from every aggregate
that reads them.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import atomic_write_text
from .ioc import RankedSet, labeled_mask
from .model import iter_batches, make_batch

HORIZONS_S = (1, 2, 3, 4)
MISS_THRESHOLD = 1.0
CURVE_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def horizon_step(seconds, dt):
    """1-based step index reached ``seconds`` after the last observation."""
    step = seconds / dt
    if abs(step - round(step)) > 1e-9 or round(step) < 1:
        raise ValueError(f"horizon {seconds} s is not a whole number of {dt} s steps")
    return int(round(step))


def pointwise_errors(pred, gt):
    return np.linalg.norm(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64),
                          axis=-1)


def metric_l2_at(pred, gt, t):
    """Distance at 1-based step ``t``; works on any leading batch shape."""
    pred = np.asarray(pred, dtype=np.float64)
    if not 1 <= t <= pred.shape[-2]:
        raise ValueError(f"step {t} outside 1..{pred.shape[-2]}")
    return pointwise_errors(pred[..., t - 1, :], np.asarray(gt)[..., t - 1, :])


def metric_missrate_at(preds, gts, t, threshold=MISS_THRESHOLD, valid_len=None):
    """Fraction of trajectories whose error at step ``t`` exceeds ``threshold``.

    Trajectories labeled for fewer than ``t`` steps are left out; NaN when
    none remain.
    """
    err = np.atleast_1d(metric_l2_at(preds, gts, t))
    keep = np.ones(err.shape, bool) if valid_len is None else np.asarray(valid_len) >= t
    if not np.any(keep):
        return math.nan
    return float(np.count_nonzero(err[keep] > threshold)) / np.count_nonzero(keep)


def metric_max_l2(pred, gt, valid_len=None):
    """Largest pointwise error over the labeled steps."""
    err = pointwise_errors(pred, gt)
    if valid_len is None:
        return err.max(axis=-1)
    t = err.shape[-1]
    mask = labeled_mask(valid_len, t).reshape(np.shape(valid_len) + (t,))
    return np.max(np.where(mask, err, -np.inf), axis=-1)


def metric_max_missrate(preds, gts, threshold=MISS_THRESHOLD, valid_len=None):
    """Fraction of trajectories whose max-L2 exceeds ``threshold``."""
    err = np.atleast_1d(metric_max_l2(preds, gts, valid_len))
    return float(np.count_nonzero(err > threshold)) / err.size


def oracle_k(fraction, n_samples):
    """Number of top samples a top-``fraction`` oracle reads (at least one)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    return max(1, math.ceil(fraction * n_samples - 1e-9))


def _ranked_array(ranked):
    if isinstance(ranked, RankedSet):
        return ranked.ranked()
    return np.asarray(ranked, dtype=np.float64)


def sample_errors(ranked, gt, valid_len=None, step=None):
    """Per-sample error in rank order: max-L2, or L2 at ``step`` when given.

    ``ranked`` is a RankedSet or an already-ordered array (..., K, T, 2);
    ``gt`` is (..., T, 2).
    """
    trajs = _ranked_array(ranked)
    gt = np.asarray(gt, dtype=np.float64)[..., None, :, :]
    if step is not None:
        return metric_l2_at(trajs, gt, step)
    vl = None if valid_len is None else np.asarray(valid_len)[..., None] * np.ones(trajs.shape[-3],
                                                                                 dtype=np.int64)
    return metric_max_l2(trajs, gt, vl)


def metric_oracle_topk(ranked, gt, k, valid_len=None, step=None):
    """Smallest error among the ``k`` highest-ranked samples."""
    errs = sample_errors(ranked, gt, valid_len, step)
    if not 1 <= k <= errs.shape[-1]:
        raise ValueError(f"k must be in 1..{errs.shape[-1]}, got {k}")
    return errs[..., :k].min(axis=-1)


def random_order(ranked, rng):
    """The same samples with a uniformly random ranking per agent."""
    a, k = ranked.scores.shape
    ranking = np.stack([rng.permutation(k) for _ in range(a)])
    return RankedSet(ranked.trajectories, ranked.scores, ranking)


def fmean(values):
    """Compensated mean, independent of accumulation order up to rounding of the inputs."""
    values = [float(v) for v in values]
    return math.fsum(values) / len(values) if values else math.nan


@dataclass
class BenchConfig:
    k: int = 50
    seed: int = 0
    batch_size: int = 32
    oracle_fraction: float = 0.1
    horizons_s: tuple = HORIZONS_S
    threshold: float = MISS_THRESHOLD
    fractions: tuple = CURVE_FRACTIONS


@dataclass
class AgentResults:
    """Per-agent predictions gathered over a test split."""

    samples: list = field(default_factory=list)  # RankedSet per batch
    futures: list = field(default_factory=list)
    valid_len: list = field(default_factory=list)
    dt: float = 0.5

    def ranked(self):
        return np.concatenate([r.ranked() for r in self.samples])

    def gt(self):
        return np.concatenate(self.futures)

    def lens(self):
        return np.concatenate(self.valid_len)


def collect(net, episodes, k, n_iters, rng, batch_size=32):
    """Run ``net.predict`` over ``episodes`` in equal-geometry batches."""
    out = AgentResults(dt=episodes[0].dt)
    for group in iter_batches(episodes, batch_size):
        batch = make_batch(group)
        out.samples.append(net.predict(batch, k, n_iters, rng))
        out.futures.append(batch.future)
        out.valid_len.append(batch.valid_len)
    return out


def summarize(results, cfg):
    """Metric name -> {horizon label: mean value} for one model on one split."""
    ranked, gt, vl = results.ranked(), results.gt(), results.lens()
    n_samples = ranked.shape[1]
    kk = oracle_k(cfg.oracle_fraction, n_samples)
    top1 = ranked[:, 0]
    pct = f"{round(100 * cfg.oracle_fraction)}%"
    out = {"l2": {}, "missrate": {}, f"oracle{pct}_l2": {}}
    for h in cfg.horizons_s:
        step = horizon_step(h, results.dt)
        if step > gt.shape[1]:
            continue
        keep = vl >= step
        label = f"{h}s"
        out["l2"][label] = fmean(metric_l2_at(top1[keep], gt[keep], step)) if keep.any() else math.nan
        out["missrate"][label] = metric_missrate_at(top1, gt, step, cfg.threshold, vl)
        orc = metric_oracle_topk(ranked[keep], gt[keep], kk, step=step) if keep.any() else []
        out[f"oracle{pct}_l2"][label] = fmean(orc)
    out["max_l2"] = {"all": fmean(metric_max_l2(top1, gt, vl))}
    out["max_missrate"] = {"all": metric_max_missrate(top1, gt, cfg.threshold, vl)}
    out[f"oracle{pct}_max_l2"] = {"all": fmean(metric_oracle_topk(ranked, gt, kk, vl))}
    out["best_max_l2"] = {"all": fmean(metric_oracle_topk(ranked, gt, n_samples, vl))}
    curve = [(k / n_samples, fmean(metric_oracle_topk(ranked, gt, k, vl)))
             for k in sorted({1, min(2, n_samples)} | {oracle_k(f, n_samples) for f in cfg.fractions})]
    return out, curve


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # (model, fold, metric, horizon, value)
    curves: dict = field(default_factory=dict)  # model -> [(top_fraction, error)]

    def value(self, model, metric, horizon="all", fold="mean"):
        for m, f, name, h, v in self.rows:
            if (m, str(f), name, h) == (model, str(fold), metric, horizon):
                return v
        raise KeyError((model, fold, metric, horizon))

    def models(self):
        return list(dict.fromkeys(r[0] for r in self.rows))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "fold", "metric", "horizon", "value"])
        for m, f, name, h, v in self.rows:
            w.writerow([m, f, name, h, repr(float(v))])
        return buf.getvalue()

    def to_table(self):
        means = [r for r in self.rows if r[1] == "mean"]
        horizons = list(dict.fromkeys(r[3] for r in means if r[3] != "all"))
        metrics = list(dict.fromkeys(r[2] for r in means))
        cols = horizons + ["all"]
        width = max([len(m) for m in self.models()] + [5])
        mw = max(len(m) for m in metrics) if metrics else 6
        lines = [f"{'model':<{width}}  {'metric':<{mw}}  " + "  ".join(f"{c:>8}" for c in cols)]
        for model in self.models():
            for metric in metrics:
                vals = {r[3]: r[4] for r in means if r[0] == model and r[2] == metric}
                if not vals:
                    continue
                cells = [f"{vals[c]:8.3f}" if c in vals else f"{'':>8}" for c in cols]
                lines.append(f"{model:<{width}}  {metric:<{mw}}  " + "  ".join(cells))
        return "\n".join(lines) + "\n"

    def curve_text(self, model):
        return "top_fraction,error\n" + "".join(f"{f!r},{e!r}\n" for f, e in self.curves[model])

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / "report.txt", out_dir / "report.csv"]
        atomic_write_text(paths[0], self.to_table())
        atomic_write_text(paths[1], self.to_csv())
        for model in self.curves:
            p = out_dir / f"oracle_curve_{model}.csv"
            atomic_write_text(p, self.curve_text(model))
            paths.append(p)
        return paths


def run_benchmark(models, folds, cfg=None):
    """Evaluate every model on every fold's test split.

    Parameters
    ----------
    models : dict
        Name -> list with one ``(net, n_iters)`` per fold.
    folds : list
        Test episode lists, or ``(train, test)`` pairs.
    cfg : BenchConfig

    Returns
    -------
    MetricReport
        Per-fold rows plus a ``mean`` row (mean of fold means) per metric.
    """
    cfg = BenchConfig() if cfg is None else cfg
    tests = [f[1] if isinstance(f, tuple) else f for f in folds]
    report = MetricReport()
    for name, per_fold in models.items():
        if len(per_fold) != len(tests):
            raise ValueError(f"model {name!r} has {len(per_fold)} entries for {len(tests)} folds")
        fold_vals, fold_curves = {}, []
        for fi, ((net, n_iters), test) in enumerate(zip(per_fold, tests)):
            rng = np.random.default_rng([cfg.seed, fi])
            res = collect(net, test, cfg.k, n_iters, rng, cfg.batch_size)
            summary, curve = summarize(res, cfg)
            fold_curves.append(curve)
            for metric, by_h in summary.items():
                for h, v in by_h.items():
                    report.rows.append((name, fi, metric, h, v))
                    fold_vals.setdefault((metric, h), []).append(v)
        for (metric, h), vals in fold_vals.items():
            report.rows.append((name, "mean", metric, h, fmean(vals)))
        report.curves[name] = [(fold_curves[0][i][0], fmean(c[i][1] for c in fold_curves))
                               for i in range(len(fold_curves[0]))]
    return report
