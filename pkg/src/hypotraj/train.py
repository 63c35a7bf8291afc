"""Training loop, learning-rate schedule and checkpoint persistence.

Checkpoint layout (all integers and reals little-endian)::

    b"HYPTRJCK"            magic
    u32 version
    u32 n, n bytes         JSON metadata (kind, configs, epoch, rng state, history)
    u32 count              number of parameter records, then per record:
        u16 n, n bytes     utf-8 name
        u8 ndim, ndim*u64  shape
        f64 * size         values, C order
    u32 crc32              of every byte before it
"""

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .baselines import LinearBaseline, RnnED, RnnEDSI
from .fileio import atomic_write_bytes
from .model import HypoNet, ModelConfig, default_config_for, iter_batches, make_batch
from .optim import AdamState, adam_step, lr_at_epoch

MAGIC = b"HYPTRJCK"
FORMAT_VERSION = 1

MODEL_KINDS = {cls.kind: cls for cls in (HypoNet, RnnED, RnnEDSI, LinearBaseline)}


class CheckpointError(ValueError):
    """Unreadable, truncated, corrupted or wrong-version checkpoint."""


class TrainingAborted(RuntimeError):
    """A non-finite loss or gradient stopped training.

    ``checkpoint`` holds the state after the last successful step.
    """

    def __init__(self, msg, checkpoint):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    lr: float = 0.004
    epochs: int = 200
    batch_size: int = 32
    clip_norm: float = 1.0
    k_train: int = 8
    n_iters_test: int = 4
    seed: int = 0
    augment: bool = True
    variant: str = "SI"
    model: str = "hyponet"

    def __post_init__(self):
        self.variant = self.variant.upper()
        if self.variant not in ("S", "SI"):
            raise ValueError(f"variant must be S or SI, got {self.variant!r}")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}; choose from {sorted(MODEL_KINDS)}")
        for name in ("lr", "epochs", "batch_size", "clip_norm", "k_train"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.model == "hyponet" and self.k_train < 2:
            raise ValueError("k_train must be >= 2 for the ranking loss")
        if self.n_iters_test < 0 or self.seed < 0:
            raise ValueError("n_iters_test and seed must be non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Checkpoint:
    kind: str
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    params: dict
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    split: dict = field(default_factory=dict)  # provenance: fold, folds, split seed

    def build(self):
        """Model instance carrying a copy of the stored parameters."""
        net = MODEL_KINDS[self.kind](self.model_cfg, seed=0)
        net.store.load_state(self.params)
        return net


def build_model(kind, model_cfg, seed=0):
    return MODEL_KINDS[kind](model_cfg, seed=seed)


def _snapshot(net, tcfg, epoch, rng, history):
    return Checkpoint(net.kind, net.cfg, tcfg, net.store.state(), epoch,
                      rng.bit_generator.state, [dict(h) for h in history])


def train(tcfg, episodes, model_cfg=None, log=None):
    """Fit a model to ``episodes`` and return the final :class:`Checkpoint`.

    Every random choice (initialisation, shuffles, rotations, latent noise)
    comes from one generator seeded with ``tcfg.seed``, so reruns on the
    same data are bit-identical. Rotation angles for an epoch are drawn up
    front, one per example.
    """
    if not episodes:
        raise ValueError("training set is empty")
    if model_cfg is None:
        model_cfg = default_config_for(episodes, variant=tcfg.variant)
    rng = np.random.default_rng(tcfg.seed)
    net = build_model(tcfg.model, model_cfg, seed=int(rng.integers(2 ** 63)))
    history = []
    if tcfg.model == "linear":
        return _snapshot(net, tcfg, 0, rng, history)
    state = AdamState()
    last_good = _snapshot(net, tcfg, 0, rng, history)
    n = len(episodes)
    for epoch in range(tcfg.epochs):
        lr = lr_at_epoch(tcfg.lr, epoch, tcfg.epochs)
        order = rng.permutation(n)
        angles = rng.uniform(0.0, 2.0 * math.pi, n) if tcfg.augment else np.zeros(n)
        sums, norms, n_clipped, n_steps = {}, [], 0, 0
        for start in range(0, n, tcfg.batch_size):
            chunk = order[start:start + tcfg.batch_size]
            for group in iter_batches([(episodes[i], angles[i]) for i in chunk], tcfg.batch_size,
                                      key=lambda pair: pair[0]):
                batch = make_batch([e for e, _ in group], [a for _, a in group])
                noise = net.draw_noise(batch, rng, tcfg.k_train)
                net.store.zero_grad()
                with ad.Tape() as tape:
                    loss, summary = net.loss(batch, noise)
                if not np.isfinite(loss.data):
                    raise TrainingAborted(f"non-finite loss at epoch {epoch + 1}", last_good)
                tape.backward(loss)
                try:
                    norm = adam_step(net.store, net.store.grads(), state, lr,
                                     clip_norm=tcfg.clip_norm)
                except ad.ContractError as exc:
                    raise TrainingAborted(f"epoch {epoch + 1}: {exc}", last_good) from exc
                norms.append(norm)
                n_clipped += norm > tcfg.clip_norm
                n_steps += 1
                for k, v in summary.items():
                    sums[k] = sums.get(k, 0.0) + v
        record = {"epoch": epoch + 1, "lr": lr, "steps": n_steps,
                  "grad_norm_max": max(norms), "grad_norm_mean": math.fsum(norms) / len(norms),
                  "clipped": int(n_clipped)}
        record.update({k: v / n_steps for k, v in sums.items()})
        history.append(record)
        if log is not None:
            log(record)
        last_good = _snapshot(net, tcfg, epoch + 1, rng, history)
    return last_good


# -- persistence ---------------------------------------------------------


def _meta(ckpt):
    return {"kind": ckpt.kind, "model_cfg": ckpt.model_cfg.to_dict(),
            "train_cfg": ckpt.train_cfg.to_dict(), "epoch": ckpt.epoch,
            "rng_state": ckpt.rng_state, "history": ckpt.history, "split": ckpt.split}


def encode_checkpoint(ckpt):
    meta = json.dumps(_meta(ckpt), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta,
             struct.pack("<I", len(ckpt.params))]
    for name, value in ckpt.params.items():
        value = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{value.ndim}Q", value.ndim, *value.shape))
        parts.append(value.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(ckpt, path):
    atomic_write_bytes(path, encode_checkpoint(ckpt))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data):
    if len(data) < len(MAGIC) + 12:
        raise CheckpointError("checkpoint is truncated")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    r = _Reader(data[:-4])
    r.take(len(MAGIC))
    version, n_meta = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupted or truncated)")
    try:
        meta = json.loads(r.take(n_meta).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata: {exc}") from exc
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (n_name,) = r.unpack("<H")
        name = r.take(n_name).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after parameter records")
    if meta.get("kind") not in MODEL_KINDS:
        raise CheckpointError(f"unknown model kind {meta.get('kind')!r}")
    try:
        return Checkpoint(meta["kind"], ModelConfig.from_dict(meta["model_cfg"]),
                          TrainConfig.from_dict(meta["train_cfg"]), params, meta["epoch"],
                          meta["rng_state"], meta["history"], meta.get("split", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint metadata: {exc}") from exc


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())

