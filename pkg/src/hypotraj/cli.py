"""Command-line entry point: ``hypotraj <command> [options]``.

Commands
--------
generate   synthesize a world and write episode files
train      fit a model (optionally on one cross-validation fold)
predict    write ranked hypotheses for one episode file
evaluate   benchmark checkpoints on their held-out folds
gradcheck  finite-difference check of the full training loss

Every command that produces artifacts writes one manifest beside them:
``manifest.json`` in an output directory, ``<file>.manifest.json`` next to
an output file.
Failures print one line ``error: <kind>: <message>`` to stderr and exit 2.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, bench, forge, model, scene
from .config import ConfigError, load_config
from .fileio import atomic_write_text
from .scene import EpisodeFormatError
from .train import CheckpointError, TrainingAborted, load_checkpoint, save_checkpoint, train


class CliError(Exception):
    def __init__(self, kind, msg):
        super().__init__(msg)
        self.kind = kind


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out):
    """``manifest.json`` inside a directory output, ``<name>.manifest.json`` beside a file."""
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(path, command, cfg, seed, inputs, outputs, started, argv):
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "seed": seed,
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.time() - started, 3),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True, default=list) + "\n")
    return path


def _with_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.world = replace(cfg.world, seed=args.seed)
        cfg.train = replace(cfg.train, seed=args.seed)
        cfg.eval = replace(cfg.eval, split_seed=args.seed)
    if getattr(args, "variant", None) is not None:
        cfg.train = replace(cfg.train, variant=args.variant.upper())
    if getattr(args, "folds", None) is not None:
        cfg.eval = replace(cfg.eval, folds=args.folds)
    if getattr(args, "k", None) is not None:
        cfg.eval = replace(cfg.eval, k=args.k)
    if getattr(args, "iters", None) is not None:
        cfg.eval = replace(cfg.eval, n_iters=args.iters)
    return cfg


def _load_data(path):
    return scene.load_episodes(path) if Path(path).is_dir() else [scene.load_episode(path)]


def _fold_split(episodes, fold, folds, seed):
    if folds <= 1:
        return episodes, episodes
    if not 0 <= fold < folds:
        raise CliError("usage", f"fold {fold} outside 0..{folds - 1}")
    return scene.split_cross_validation(episodes, folds, seed)[fold]


def cmd_generate(args, cfg, argv, started):
    out = Path(args.out)
    episodes = forge.generate(cfg.world)
    paths = scene.save_episodes(episodes, out)
    write_manifest(manifest_path(out), "generate", cfg, cfg.world.seed,
                   [args.config] if args.config else [], paths, started, argv)
    print(f"wrote {len(paths)} episodes to {out}")


def cmd_train(args, cfg, argv, started):
    episodes = _load_data(args.data)
    train_eps, _ = _fold_split(episodes, args.fold, cfg.eval.folds, cfg.eval.split_seed) \
        if args.fold is not None else (episodes, None)
    tcfg = cfg.train
    if args.model is not None:
        tcfg = replace(tcfg, model=args.model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        ckpt = train(tcfg, train_eps, cfg.model_config(train_eps))
    except TrainingAborted as exc:
        save_checkpoint(exc.checkpoint, out.with_name(out.name + ".lastgood"))
        raise CliError("training", f"{exc}; last good checkpoint saved beside {out}") from None
    if args.fold is not None:
        ckpt.split = {"fold": args.fold, "folds": cfg.eval.folds, "seed": cfg.eval.split_seed}
    save_checkpoint(ckpt, out)
    hist = out.with_name(out.stem + ".history.json")
    atomic_write_text(hist, json.dumps(ckpt.history, indent=1) + "\n")
    inputs = ([args.config] if args.config else []) + \
        ([args.data] if Path(args.data).is_file() else sorted(Path(args.data).glob("*.ep")))
    write_manifest(manifest_path(out), "train", cfg, tcfg.seed, inputs, [out, hist], started, argv)
    last = ckpt.history[-1] if ckpt.history else {}
    print(f"trained {ckpt.kind} for {ckpt.epoch} epochs; final total {last.get('total', float('nan')):.6g}")


def format_prediction(ep, ranked, agents, k, n_iters):
    """Text block: header, then per agent per rank the score and trajectory."""
    lines = [f"prediction {ep.episode_id} {k} {n_iters}"]
    for a, agent in enumerate(agents):
        lines.append(f"agent {agent.agent_id}")
        for rank, idx in enumerate(ranked.ranking[a]):
            lines.append(f"sample {rank + 1} {float(ranked.scores[a, idx])!r}")
            lines.extend(f"{float(x)!r} {float(y)!r}" for x, y in ranked.trajectories[a, idx])
    return "\n".join(lines) + "\n"


def cmd_predict(args, cfg, argv, started):
    ckpt = load_checkpoint(args.ckpt)
    net = ckpt.build()
    ep = scene.load_episode(args.episode)
    k = cfg.eval.k if net.kind == "hyponet" else 1
    n_iters = cfg.eval.n_iters if net.kind == "hyponet" else 0
    batch = model.make_batch([ep])
    seed = cfg.train.seed
    rng = np.random.default_rng(seed)
    ranked = net.predict(batch, k, n_iters, rng)
    tr = batch.transforms[0]
    world = tr.invert(ranked.trajectories.reshape(-1, 2)).reshape(ranked.trajectories.shape)
    ranked = type(ranked)(world, ranked.scores, ranked.ranking)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out, format_prediction(ep, ranked, ep.agents, ranked.scores.shape[1], n_iters))
    write_manifest(manifest_path(out), "predict", cfg, seed,
                   [args.ckpt, args.episode] + ([args.config] if args.config else []),
                   [out], started, argv)
    print(f"wrote {ranked.scores.shape[1]} ranked hypotheses per agent to {out}")


def _label(ckpt, n_iters):
    if ckpt.kind == "hyponet":
        return f"hyponet-{ckpt.model_cfg.variant.lower()}-it{n_iters}"
    return ckpt.kind


def cmd_evaluate(args, cfg, argv, started):
    episodes = _load_data(args.data)
    models, folds = {}, None
    for path in args.ckpts:
        ckpt = load_checkpoint(path)
        split = ckpt.split or {"fold": 0, "folds": 1, "seed": cfg.eval.split_seed}
        if folds is None:
            folds = split["folds"]
            tests = [_fold_split(episodes, f, folds, split["seed"])[1] for f in range(folds)]
        elif split["folds"] != folds:
            raise CliError("usage", "all checkpoints must come from the same fold layout")
        net = ckpt.build()
        iters = sorted({0, cfg.eval.n_iters}) if ckpt.kind == "hyponet" else [0]
        for it in iters:
            entry = models.setdefault(_label(ckpt, it), [None] * folds)
            entry[split["fold"]] = (net, it)
    for name, entries in models.items():
        missing = [i for i, e in enumerate(entries) if e is None]
        if missing:
            raise CliError("usage", f"model {name} lacks checkpoints for folds {missing}")
    bcfg = bench.BenchConfig(k=cfg.eval.k, seed=cfg.eval.split_seed, batch_size=cfg.eval.batch_size,
                             oracle_fraction=cfg.eval.oracle_fraction, threshold=cfg.eval.threshold)
    report = bench.run_benchmark(models, tests, bcfg)
    out = Path(args.out)
    paths = report.write(out)
    inputs = list(args.ckpts) + ([args.config] if args.config else [])
    write_manifest(manifest_path(out), "evaluate", cfg, cfg.eval.split_seed, inputs, paths, started, argv)
    sys.stdout.write(report.to_table())


def cmd_gradcheck(args, cfg, argv, started):
    g = cfg.gradcheck
    world = replace(cfg.world, n_episodes=1, n_agents=g.n_agents, delta=g.delta)
    ep = forge.generate(world)[0]
    mcfg = cfg.model_config([ep])
    seed = cfg.train.seed
    net = model.HypoNet(mcfg, seed=seed)
    batch = model.make_batch([ep])
    noise = net.draw_noise(batch, np.random.default_rng(seed), g.k)
    for name, p in net.store.items():
        # lift the zero-initialised step input off zero so its consumer is exercised
        if not p.data.any() and p.ndim == 2:
            p.data = np.random.default_rng([seed, 1]).normal(0.0, 0.1, p.shape)
    worst, per_param = model.gradient_check(net, batch, noise, g.eps, detail=True,
                                            max_entries=g.max_entries or None,
                                            rng=np.random.default_rng(seed))
    by_module = {}
    for name, err in per_param.items():
        mod = name.split(".")[0]
        by_module[mod] = max(by_module.get(mod, 0.0), err)
    worst = float(worst)
    by_module = {m: float(e) for m, e in by_module.items()}
    ok = bool(worst <= g.tolerance)
    for mod, err in by_module.items():
        print(f"{mod} max_rel_error={err:.3e} {'pass' if err <= g.tolerance else 'FAIL'}")
    print(f"overall max_rel_error={worst:.3e} {'pass' if ok else 'FAIL'}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        res = out / "gradcheck.json"
        atomic_write_text(res, json.dumps({"max_rel_error": worst, "per_module": by_module,
                                           "tolerance": g.tolerance, "pass": ok}, indent=2) + "\n")
        write_manifest(manifest_path(out), "gradcheck", cfg, seed,
                       [args.config] if args.config else [], [res], started, argv)
    if not ok:
        raise CliError("gradcheck", f"max relative error {worst:.3e} exceeds {g.tolerance:g}")


def build_parser():
    p = argparse.ArgumentParser(prog="hypotraj", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
        sp.add_argument("--out", required=out_required, help="output path")

    sp = sub.add_parser("generate", help="write a synthetic episode set")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--data", required=True, help="episode directory or file")
    sp.add_argument("--variant", choices=["s", "si", "S", "SI"])
    sp.add_argument("--model", choices=["hyponet", "rnned", "rnnedsi", "linear"])
    sp.add_argument("--folds", type=int, help="number of cross-validation folds")
    sp.add_argument("--fold", type=int, help="train on this fold's training split")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="rank hypotheses for one episode")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--episode", required=True)
    sp.add_argument("--k", type=int, help="number of samples")
    sp.add_argument("--iters", type=int, help="iterative refinement cycles")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="benchmark checkpoints")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("ckpts", nargs="+", help="checkpoint files")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(sp, out_required=False)
    sp.add_argument("--variant", choices=["s", "si", "S", "SI"])
    sp.set_defaults(func=cmd_gradcheck)
    return p


def _error(kind, msg):
    sys.stderr.write(f"error: {kind}: {' '.join(str(msg).split())}\n")
    return 2


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        cfg = _with_overrides(load_config(args.config), args)
        args.func(args, cfg, argv, started)
    except CliError as exc:
        return _error(exc.kind, exc)
    except ConfigError as exc:
        return _error("config", exc)
    except EpisodeFormatError as exc:
        return _error("episode", exc)
    except CheckpointError as exc:
        return _error("checkpoint", exc)
    except FileNotFoundError as exc:
        return _error("io", f"{exc.strerror}: {exc.filename}")
    except (ValueError, OSError) as exc:
        return _error("invalid", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
