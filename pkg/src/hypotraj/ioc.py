"""Ranking and refinement decoder.

A GRU (Decoder2) is started from the past encoding and rolled over every
hypothesis in lockstep across all (agent, sample) streams of an episode,
fed by the scene-context fusion input. A shared fc layer turns each hidden
state into a reward; the score is the sum of rewards. Another fc layer maps
the last hidden state to a displacement for the whole trajectory.

Hypotheses enter as constants: no gradient reaches whatever produced them.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from . import scf
from .autodiff import ContractError, ShapeError, Tensor


def init_params(store, cfg, rng, prefix="ioc"):
    with_int = cfg.variant == "SI"
    if cfg.h_dec != cfg.h_enc:
        nn.add_linear(store, f"{prefix}.proj", cfg.h_enc, cfg.h_dec, rng)
    nn.add_gru(store, f"{prefix}.dec2.gru", scf.input_dim(cfg, with_int), cfg.h_dec, rng)
    nn.add_linear(store, f"{prefix}.reward", cfg.h_dec, 1, rng)
    nn.add_linear(store, f"{prefix}.refine", cfg.h_dec, 2 * cfg.delta, rng)


@dataclass
class StreamLayout:
    """Where each (agent, sample) stream lives.

    ``group`` is the episode of each stream, ``owner`` its agent, ``map_index``
    the scene feature map it reads; ``last`` its last observed point.
    """

    group: np.ndarray
    owner: np.ndarray
    map_index: np.ndarray
    last: np.ndarray

    @classmethod
    def for_agents(cls, episode_of_agent, map_of_agent, last_points, k):
        a = np.arange(len(episode_of_agent))
        return cls(np.repeat(episode_of_agent, k), np.repeat(a, k),
                   np.repeat(map_of_agent, k), np.repeat(last_points, k, axis=0))


def initial_hidden(h_x, k, store, cfg, prefix="ioc"):
    h = ad.repeat_rows(h_x, k)
    if cfg.h_dec != cfg.h_enc:
        h = nn.linear(store, f"{prefix}.proj", h)
    return h


def roll_decoder2(h_x, trajs, layout, fmap, store, cfg, prefix="ioc", scf_prefix="scf"):
    """Hidden states per step, a list of T tensors (S, h_dec).

    ``trajs`` is (S, T, 2) in the same frame as the feature maps; ``h_x`` is
    (A, h_enc) with S = A * K. Neighbour hiddens pooled at step t are those
    of step t - 1.
    """
    trajs = np.asarray(trajs, dtype=np.float64)
    s, t_len, _ = trajs.shape
    a = h_x.shape[0]
    if s % a or layout.group.shape[0] != s:
        raise ShapeError(f"{s} streams do not align with {a} agents / layout")
    if t_len != cfg.delta:
        raise ShapeError(f"trajectories have {t_len} steps, decoder expects {cfg.delta}")
    k = s // a
    spec = scf.polar_spec(cfg)
    vel = scf.velocities(trajs, layout.last, cfg.dt)
    h = initial_hidden(h_x, k, store, cfg, prefix)
    hiddens = []
    for t in range(t_len):
        pos = trajs[:, t]
        gamma = scf.embed_velocity(vel[:, t], store, scf_prefix)
        scene = scf.pool_scene_feature(fmap, pos, layout.map_index)
        inter = None
        if cfg.variant == "SI":
            op = scf.interaction_operator(pos, layout.group, layout.owner, spec)
            inter = scf.pooled_interactions(op, h, spec)
        x = scf.fuse_step_input(gamma, scene, inter)
        h = nn.gru_step(h, x, store, f"{prefix}.dec2.gru")
        hiddens.append(h)
    return hiddens


def reward_step(hidden, store, prefix="ioc"):
    """psi_t per stream, shape (S,). Same parameters at every step."""
    return nn.linear(store, f"{prefix}.reward", hidden).reshape(-1)


def score_sample(rewards):
    """s = sum over t of psi_t."""
    if len(rewards) < 1:
        raise ContractError("score_sample needs at least one reward")
    total = rewards[0]
    for r in rewards[1:]:
        total = total + r
    return total


def regress_refinement(last_hidden, store, cfg, prefix="ioc"):
    """Displacements (S, T, 2); the fc output is read row-major by time."""
    out = nn.linear(store, f"{prefix}.refine", last_hidden)
    return out.reshape(last_hidden.shape[0], cfg.delta, 2)


def score_and_refine(h_x, trajs, layout, fmap, store, cfg, prefix="ioc", scf_prefix="scf"):
    hiddens = roll_decoder2(h_x, trajs, layout, fmap, store, cfg, prefix, scf_prefix)
    rewards = [reward_step(h, store, prefix) for h in hiddens]
    return score_sample(rewards), regress_refinement(hiddens[-1], store, cfg, prefix), rewards


@dataclass
class RankedSet:
    """Per agent: K trajectories, their scores and the descending-score order."""

    trajectories: np.ndarray  # (A, K, T, 2)
    scores: np.ndarray  # (A, K)
    ranking: np.ndarray  # (A, K), ties broken by lower index

    @classmethod
    def build(cls, trajectories, scores):
        scores = np.asarray(scores, dtype=np.float64)
        ranking = np.argsort(-scores, axis=-1, kind="stable")
        return cls(np.asarray(trajectories, dtype=np.float64), scores, ranking)

    def ranked(self):
        """Trajectories reordered best first."""
        idx = self.ranking[:, :, None, None]
        return np.take_along_axis(self.trajectories, idx, axis=1)


def iterate_feedback(h_x, trajs, layout, fmap, store, cfg, n_iters):
    """Refine ``n_iters`` times (Y <- Y + dY), then score the result.

    ``n_iters = 0`` only scores. Returns a :class:`RankedSet`.
    """
    if n_iters < 0:
        raise ContractError("n_iters must be >= 0")
    a = h_x.shape[0]
    y = np.array(trajs, dtype=np.float64)
    for _ in range(n_iters):
        _, delta, _ = score_and_refine(h_x, y, layout, fmap, store, cfg)
        y = y + delta.data
    scores, _, _ = score_and_refine(h_x, y, layout, fmap, store, cfg)
    k = y.shape[0] // a
    return RankedSet.build(y.reshape(a, k, cfg.delta, 2), scores.data.reshape(a, k))


def labeled_mask(valid_len, t):
    valid_len = np.asarray(valid_len, dtype=np.int64).reshape(-1)
    return np.arange(t)[None, :] < valid_len[:, None]


def max_distance(samples, target, valid_len=None):
    """d = max over labeled steps of the pointwise L2 error, per sample (A, K)."""
    samples = np.asarray(samples, dtype=np.float64)
    a, k, t, _ = samples.shape
    err = np.linalg.norm(samples - np.asarray(target).reshape(a, 1, t, 2), axis=-1)
    vl = np.full(a, t) if valid_len is None else valid_len
    mask = labeled_mask(vl, t)[:, None, :]
    return np.max(np.where(mask, err, -np.inf), axis=-1)


def loss_ce(scores, distances):
    """H(p, q) = -sum q ln p with q = softmax(-d), p = softmax(s); per agent.

    ``scores`` (A, K) tensor, ``distances`` (A, K) array.
    """
    scores = ad.as_tensor(scores)
    d = np.asarray(distances, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores.reshape(1, -1)
        d = d.reshape(1, -1)
    if scores.shape[-1] < 2:
        raise ContractError("loss_ce needs K >= 2 samples")
    if not np.all(np.isfinite(d)):
        raise ContractError("loss_ce: non-finite distance")
    z = -d - np.max(-d, axis=-1, keepdims=True)
    q = np.exp(z) / np.sum(np.exp(z), axis=-1, keepdims=True)
    return -ad.sum(ad.log_softmax(scores, axis=-1) * q, axis=-1)


def loss_reg(samples, deltas, target, valid_len=None):
    """Per-agent mean over K of the summed L2 norm of Y - Y_hat - dY."""
    samples = np.asarray(samples, dtype=np.float64)
    deltas = ad.as_tensor(deltas)
    a, k, t, _ = samples.shape
    if deltas.shape != samples.shape:
        raise ShapeError(f"deltas {deltas.shape} do not match samples {samples.shape}")
    resid = Tensor(np.asarray(target).reshape(a, 1, t, 2) - samples) - deltas
    vl = np.full(a, t) if valid_len is None else valid_len
    mask = labeled_mask(vl, t)[:, None, :].astype(np.float64)
    return ad.sum(ad.sum(ad.norm(resid, axis=-1) * mask, axis=2), axis=1) * (1.0 / k)
