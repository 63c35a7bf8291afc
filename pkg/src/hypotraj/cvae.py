"""Hypothesis sampler: recurrent encoders, latent recognition network,
softmax-mask fusion and the displacement decoder.

Trajectories enter the encoders relative to the agent's last observed
point, so the encodings are translation invariant. Batched tensors carry
one row per agent (encoders) or per (agent, sample) stream (decoder),
agent-major: stream ``a * K + k``.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor


def init_params(store, cfg, rng, prefix="cvae"):
    for enc in ("enc1", "enc2"):
        nn.add_temporal_conv(store, f"{prefix}.{enc}.conv", cfg.conv_width, 2, cfg.conv_channels, rng)
        nn.add_gru(store, f"{prefix}.{enc}.gru", cfg.conv_channels, cfg.h_enc, rng)
    nn.add_linear(store, f"{prefix}.recog.fc", 2 * cfg.h_enc, cfg.recog_hidden, rng)
    nn.add_linear(store, f"{prefix}.recog.mu", cfg.recog_hidden, cfg.d_z, rng)
    nn.add_linear(store, f"{prefix}.recog.logvar", cfg.recog_hidden, cfg.d_z, rng)
    nn.add_linear(store, f"{prefix}.mask", cfg.d_z, cfg.h_enc, rng)
    store.add(f"{prefix}.dec1.input", np.zeros((1, cfg.dec1_input)))
    nn.add_gru(store, f"{prefix}.dec1.gru", cfg.dec1_input, cfg.h_enc, rng)
    nn.add_linear(store, f"{prefix}.dec1.out", cfg.h_enc, 2, rng)


def _encode(seq, store, name):
    seq = ad.as_tensor(seq)
    if seq.ndim == 2:
        seq = seq.reshape(1, *seq.shape)
    feats = ad.temporal_conv(seq, store[f"{name}.conv.K"]) + store[f"{name}.conv.b"]
    n_hidden = store[f"{name}.gru.U"].shape[0]
    h = Tensor(np.zeros((seq.shape[0], n_hidden)))
    for t in range(feats.shape[1]):
        h = nn.gru_step(h, feats[:, t, :], store, f"{name}.gru")
    return h


def encode_past(past, store, iota=None, prefix="cvae"):
    """Encoder1: temporal conv then GRU; returns H_X (B, h_enc).

    ``past`` is (iota, 2) or (B, iota, 2), relative to the last point.
    """
    seq = ad.as_tensor(past)
    if iota is not None and seq.shape[-2] != iota:
        raise ShapeError(f"past has {seq.shape[-2]} points, expected iota={iota}")
    return _encode(seq, store, f"{prefix}.enc1")


def encode_future(future, store, delta=None, prefix="cvae"):
    """Encoder2 over the (padded) future; train time only."""
    seq = ad.as_tensor(future)
    if delta is not None and seq.shape[-2] != delta:
        raise ShapeError(f"future has {seq.shape[-2]} points, expected delta={delta}")
    return _encode(seq, store, f"{prefix}.enc2")


@dataclass
class LatentDistribution:
    mu: Tensor
    sigma: Tensor


def recognize(h_x, h_y, store, prefix="cvae"):
    """Q(z | X, Y) = N(mu, sigma) with sigma = exp(raw / 2)."""
    hid = ad.relu(nn.linear(store, f"{prefix}.recog.fc", ad.concat([h_x, h_y], axis=-1)))
    mu = nn.linear(store, f"{prefix}.recog.mu", hid)
    sigma = ad.exp(nn.linear(store, f"{prefix}.recog.logvar", hid) * 0.5)
    return LatentDistribution(mu, sigma)


def reparameterize(dist, eps):
    """z = mu + sigma * eps. ``eps`` must match (or broadcast to) mu."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != dist.mu.shape[-1]:
        raise ShapeError(f"eps dim {eps.shape[-1]} != latent dim {dist.mu.shape[-1]}")
    return dist.mu + dist.sigma * eps


def sample_prior(d_z, rng, n=None):
    """Draws from N(0, I): shape (d_z,) or (n, d_z)."""
    shape = (d_z,) if n is None else (n, d_z)
    return rng.standard_normal(shape)


def mask_embedding(h_x, z, store, prefix="cvae"):
    """H_X * softmax(fc(z)); rows of ``h_x`` align with rows of ``z``."""
    beta = ad.softmax(nn.linear(store, f"{prefix}.mask", ad.as_tensor(z)), axis=-1)
    return h_x * beta


def decode_samples(masked, last_points, delta, store, prefix="cvae"):
    """Decoder1. ``masked`` is (S, h_enc), ``last_points`` (S, 2).

    Returns trajectories (S, delta, 2) as the cumulative sum of per-step
    displacements from the last observed point.
    """
    masked = ad.as_tensor(masked)
    n = masked.shape[0]
    step_in = ad.matmul(Tensor(np.ones((n, 1))), store[f"{prefix}.dec1.input"])
    h = masked
    disps = []
    for _ in range(delta):
        h = nn.gru_step(h, step_in, store, f"{prefix}.dec1.gru")
        disps.append(nn.linear(store, f"{prefix}.dec1.out", h))
    steps = ad.stack(disps, axis=1)
    last = np.asarray(last_points, dtype=np.float64).reshape(n, 1, 2)
    return ad.cumsum(steps, axis=1) + last


def _labeled_mask(valid_len, delta):
    valid_len = np.asarray(valid_len, dtype=np.int64).reshape(-1)
    return (np.arange(delta)[None, :] < valid_len[:, None]).astype(np.float64)


def loss_recon(samples, target, valid_len=None):
    """Per-agent mean over K of the summed pointwise L2 error.

    ``samples`` (A, K, T, 2) tensor, ``target`` (A, T, 2) array. Returns (A,).
    """
    samples = ad.as_tensor(samples)
    a, k, t, _ = samples.shape
    target = np.asarray(target, dtype=np.float64).reshape(a, 1, t, 2)
    vl = np.full(a, t) if valid_len is None else valid_len
    mask = _labeled_mask(vl, t).reshape(a, 1, t)
    dist = ad.norm(samples - target, axis=-1) * mask
    return ad.sum(ad.sum(dist, axis=2), axis=1) * (1.0 / k)


def loss_kld(dist):
    """KL(N(mu, sigma) || N(0, I)) per row: 0.5 * sum(mu^2 + sigma^2 - 1 - 2 ln sigma)."""
    mu, sigma = dist.mu, dist.sigma
    terms = ad.square(mu) + ad.square(sigma) - 1.0 - 2.0 * ad.log(sigma)
    return ad.sum(terms, axis=-1) * 0.5
