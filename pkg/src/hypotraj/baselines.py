"""Deterministic comparison models: a least-squares line, a recurrent
encoder-decoder over the past only, and the same decoder fed with the
scene-context fusion input built from its own evolving prediction.

Every model exposes the interface the trainer and benchmark use:
``store``, ``cfg``, ``kind``, ``draw_noise``, ``loss`` and ``predict``.
Deterministic models return one hypothesis per agent.
"""

import numpy as np

from . import autodiff as ad
from . import cvae, ioc, nn, scf
from .autodiff import ContractError, Tensor
from .nn import ParamStore


def baseline_linear(past, delta, dt=1.0):
    """Per-coordinate least-squares line through the past, extrapolated.

    Parameters
    ----------
    past : array (iota, 2) or (A, iota, 2)
        Observed positions at times ``-(iota - 1) * dt, ..., 0``.
    delta : int
        Number of future steps to emit.

    Returns
    -------
    array (delta, 2) or (A, delta, 2)
    """
    past = np.asarray(past, dtype=np.float64)
    single = past.ndim == 2
    if single:
        past = past[None]
    iota = past.shape[1]
    if iota < 2:
        raise ContractError("baseline_linear needs at least two past points")
    t_past = (np.arange(iota) - (iota - 1)) * dt
    design = np.stack([np.ones(iota), t_past], axis=1)
    coef = np.stack([np.linalg.lstsq(design, p, rcond=None)[0] for p in past])  # (A, 2, 2)
    t_fut = np.arange(1, delta + 1) * dt
    out = coef[:, None, 0, :] + t_fut[None, :, None] * coef[:, None, 1, :]
    return out[0] if single else out


def _single(trajs):
    """Wrap (A, T, 2) deterministic predictions as a one-sample ranked set."""
    a = trajs.shape[0]
    return ioc.RankedSet.build(trajs[:, None], np.zeros((a, 1)))


class LinearBaseline:
    kind = "linear"

    def __init__(self, cfg, store=None, seed=0):
        self.cfg = cfg
        self.store = ParamStore() if store is None else store

    def draw_noise(self, batch, rng, k):
        return None

    def loss(self, batch, noise):
        raise ContractError("the linear baseline is fit in closed form, not trained")

    def predict(self, batch, k=1, n_iters=0, rng=None):
        past = batch.past_rel + batch.last[:, None, :]
        return _single(baseline_linear(past, self.cfg.delta, self.cfg.dt))


def summed_l2(pred, target, valid_len):
    """Per-agent sum over labeled steps of the pointwise L2 error."""
    t = target.shape[1]
    mask = ioc.labeled_mask(valid_len, t).astype(np.float64)
    return ad.sum(ad.norm(pred - np.asarray(target), axis=-1) * mask, axis=1)


class RnnED:
    """Past encoder, GRU decoder with a learned step input, displacement head."""

    kind = "rnned"
    prefix = "rnned"

    def __init__(self, cfg, store=None, seed=0):
        self.cfg = cfg
        if store is None:
            rng = np.random.default_rng(seed)
            store = ParamStore()
            self._init(store, rng)
        self.store = store

    def _init(self, store, rng):
        cfg, p = self.cfg, self.prefix
        nn.add_temporal_conv(store, f"{p}.enc.conv", cfg.conv_width, 2, cfg.conv_channels, rng)
        nn.add_gru(store, f"{p}.enc.gru", cfg.conv_channels, cfg.h_enc, rng)
        store.add(f"{p}.dec.input", np.zeros((1, cfg.dec1_input)))
        nn.add_gru(store, f"{p}.dec.gru", cfg.dec1_input, cfg.h_enc, rng)
        nn.add_linear(store, f"{p}.dec.out", cfg.h_enc, 2, rng)

    def draw_noise(self, batch, rng, k):
        return None

    def forward(self, batch):
        """Predicted trajectories (A, T, 2) as a tensor."""
        store, p = self.store, self.prefix
        h = cvae._encode(batch.past_rel, store, f"{p}.enc")
        n = h.shape[0]
        step_in = ad.matmul(Tensor(np.ones((n, 1))), store[f"{p}.dec.input"])
        disps = []
        for _ in range(self.cfg.delta):
            h = nn.gru_step(h, step_in, store, f"{p}.dec.gru")
            disps.append(nn.linear(store, f"{p}.dec.out", h))
        return ad.cumsum(ad.stack(disps, axis=1), axis=1) + batch.last[:, None, :]

    def loss(self, batch, noise=None):
        per_agent = summed_l2(self.forward(batch), batch.future, batch.valid_len)
        total = ad.mean(per_agent)
        return total, {"recon": float(total.data), "total": float(total.data)}

    def predict(self, batch, k=1, n_iters=0, rng=None):
        return _single(self.forward(batch).data)


class RnnEDSI(RnnED):
    """RNN encoder-decoder whose step input fuses velocity, scene and
    interaction features computed from its own prediction at the previous
    step (the last observation at the first step).

    Positions and velocities that drive the pooling are taken as constants;
    gradients reach the fusion parameters through the embeddings and the
    pooled hidden states.
    """

    kind = "rnnedsi"
    prefix = "rnnedsi"

    def _init(self, store, rng):
        cfg, p = self.cfg, self.prefix
        nn.add_temporal_conv(store, f"{p}.enc.conv", cfg.conv_width, 2, cfg.conv_channels, rng)
        nn.add_gru(store, f"{p}.enc.gru", cfg.conv_channels, cfg.h_enc, rng)
        scf.init_params(store, cfg, cfg.n_channels, rng, prefix=f"{p}.scf")
        n_in = cfg.vel_embed + cfg.cnn_features + scf.polar_spec(cfg).n_bins * cfg.h_enc
        nn.add_gru(store, f"{p}.dec.gru", n_in, cfg.h_enc, rng)
        nn.add_linear(store, f"{p}.dec.out", cfg.h_enc, 2, rng)

    def forward(self, batch):
        cfg, store, p = self.cfg, self.store, self.prefix
        spec = scf.polar_spec(cfg)
        h = cvae._encode(batch.past_rel, store, f"{p}.enc")
        fmap = scf.scene_cnn(batch.grids, batch.origins, batch.cell_size, store, prefix=f"{p}.scf")
        layout = batch.layout(1)
        pos = batch.last.copy()
        vel = (batch.past_rel[:, -1] - batch.past_rel[:, -2]) / cfg.dt
        disps = []
        for _ in range(cfg.delta):
            gamma = scf.embed_velocity(vel, store, prefix=f"{p}.scf")
            scene = scf.pool_scene_feature(fmap, pos, layout.map_index)
            op = scf.interaction_operator(pos, layout.group, layout.owner, spec)
            inter = scf.pooled_interactions(op, h, spec)
            h = nn.gru_step(h, scf.fuse_step_input(gamma, scene, inter), store, f"{p}.dec.gru")
            d = nn.linear(store, f"{p}.dec.out", h)
            disps.append(d)
            vel = d.data / cfg.dt
            pos = pos + d.data
        return ad.cumsum(ad.stack(disps, axis=1), axis=1) + batch.last[:, None, :]
