"""Model configuration, batching and the full sample/rank/refine model."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from . import cvae, ioc, scf
from .autodiff import ShapeError
from .nn import ParamStore
from .scene import normalize, rotate_augment


RANKER_SAMPLES = ("posterior", "prior", "mixed")


@dataclass
class ModelConfig:
    iota: int = 4
    delta: int = 8
    dt: float = 0.5
    n_channels: int = 2
    h_enc: int = 48
    d_z: int = 16
    conv_width: int = 2
    conv_channels: int = 16
    recog_hidden: int = 48
    dec1_input: int = 16
    h_dec: int = 48
    vel_embed: int = 16
    cnn_features: int = 8
    n_rings: int = 4
    n_wedges: int = 8
    r_min: float = 0.5
    r_max: float = 16.0
    variant: str = "SI"
    # which sampler outputs train the ranker: "posterior", "prior", or
    # "mixed" (scores learned on prior draws, refinement on posterior draws)
    ranker_samples: str = "mixed"
    # extra ranking/refinement passes in training on the detached refined samples
    train_feedback: int = 1

    def __post_init__(self):
        self.variant = self.variant.upper()
        if self.variant not in ("S", "SI"):
            raise ValueError(f"variant must be S or SI, got {self.variant!r}")
        if self.ranker_samples not in RANKER_SAMPLES:
            raise ValueError(f"ranker_samples must be one of {RANKER_SAMPLES}, got {self.ranker_samples!r}")
        if self.train_feedback < 0:
            raise ValueError("train_feedback must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    """Arrays for a set of normalized episodes sharing grid geometry.

    Agents are listed episode by episode; positions are in each episode's
    normalized frame (agent 0's last past point at the origin).
    """

    episodes: list
    transforms: list
    past_rel: np.ndarray  # (A, iota, 2) relative to each agent's last point
    last: np.ndarray  # (A, 2)
    future: np.ndarray  # (A, delta, 2), unlabeled steps padded
    valid_len: np.ndarray  # (A,)
    episode_of_agent: np.ndarray  # (A,)
    grids: np.ndarray  # (B, H, W, C)
    origins: np.ndarray  # (B, 2)
    cell_size: float

    @property
    def n_agents(self):
        return self.last.shape[0]

    @property
    def future_rel(self):
        return self.future - self.last[:, None, :]

    def layout(self, k):
        return ioc.StreamLayout.for_agents(self.episode_of_agent, self.episode_of_agent, self.last, k)


def batch_key(ep):
    g = ep.scene
    return (ep.iota, ep.delta, ep.dt, g.values.shape, g.cell_size)


def make_batch(episodes, angles=None):
    """Normalize (and optionally rotate about the new origin) then stack."""
    if not episodes:
        raise ShapeError("empty batch")
    keys = {batch_key(ep) for ep in episodes}
    if len(keys) != 1:
        raise ShapeError(f"episodes in one batch must share horizons and grid geometry, got {keys}")
    eps, trs = [], []
    for i, ep in enumerate(episodes):
        nep, tr = normalize(ep)
        if angles is not None and angles[i] != 0.0:
            nep = rotate_augment(nep, float(angles[i]))
        eps.append(nep)
        trs.append(tr)
    pasts, lasts, futs, vls, owner = [], [], [], [], []
    for e, ep in enumerate(eps):
        for a in ep.agents:
            lasts.append(a.past[-1])
            pasts.append(a.past - a.past[-1])
            futs.append(a.future_padded(ep.delta))
            vls.append(a.valid_len)
            owner.append(e)
    return Batch(eps, trs, np.array(pasts), np.array(lasts), np.array(futs),
                 np.array(vls, dtype=np.int64), np.array(owner, dtype=np.int64),
                 np.stack([ep.scene.values for ep in eps]),
                 np.array([ep.scene.origin for ep in eps]), eps[0].scene.cell_size)


def iter_batches(items, size, key=None):
    """Consecutive batches of at most ``size`` episodes with equal geometry.

    ``key`` extracts the episode from each item when items carry extras.
    """
    groups = {}
    for item in items:
        ep = item if key is None else key(item)
        groups.setdefault(batch_key(ep), []).append(item)
    for group in groups.values():
        for i in range(0, len(group), size):
            yield group[i:i + size]


class HypoNet:
    """CVAE sampler + scene-context ranking/refinement decoder."""

    kind = "hyponet"

    def __init__(self, cfg, store=None, seed=0):
        self.cfg = cfg
        if store is None:
            rng = np.random.default_rng(seed)
            store = ParamStore()
            cvae.init_params(store, cfg, rng)
            scf.init_params(store, cfg, cfg.n_channels, rng)
            ioc.init_params(store, cfg, rng)
        self.store = store

    def draw_noise(self, batch, rng, k):
        """Latent noise (A, K, d_z); twice K when prior draws also feed the ranker."""
        n = k if self.cfg.ranker_samples == "posterior" else 2 * k
        return rng.standard_normal((batch.n_agents, n, self.cfg.d_z))

    def _features(self, batch):
        h_x = cvae.encode_past(batch.past_rel, self.store, self.cfg.iota)
        fmap = scf.scene_cnn(batch.grids, batch.origins, batch.cell_size, self.store)
        return h_x, fmap

    def _decode(self, h_x, z, batch, k):
        masked = cvae.mask_embedding(ad.repeat_rows(h_x, k), z, self.store)
        return cvae.decode_samples(masked, np.repeat(batch.last, k, axis=0), self.cfg.delta, self.store)

    def losses(self, batch, eps, ranker_samples=None):
        """Per-agent loss terms and their batch mean, for fixed latent noise ``eps``.

        ``eps`` comes from :meth:`draw_noise`. Its first K draws are pushed
        through the posterior for the reconstruction loss. The ranker sees
        sampled trajectories as constants and is run ``1 + train_feedback``
        times, each pass on the previous pass's refined output; its loss
        terms are averaged over the passes. Passing ``ranker_samples`` (one
        (A, K_r, T, 2) array per pass) pins those inputs, which makes the
        total an ordinary function of the parameters for gradient checking.
        """
        cfg, store = self.cfg, self.store
        mode = cfg.ranker_samples
        a = eps.shape[0]
        k = eps.shape[1] if mode == "posterior" else eps.shape[1] // 2
        t = cfg.delta
        h_x, fmap = self._features(batch)
        h_y = cvae.encode_future(batch.future_rel, store, cfg.delta)
        dist = cvae.recognize(h_x, h_y, store)
        z = cvae.reparameterize(
            cvae.LatentDistribution(ad.repeat_rows(dist.mu, k), ad.repeat_rows(dist.sigma, k)),
            eps[:, :k].reshape(a * k, cfg.d_z))
        samples = self._decode(h_x, z, batch, k)
        recon = cvae.loss_recon(samples.reshape(a, k, t, 2), batch.future, batch.valid_len)
        kld = cvae.loss_kld(dist)
        pinned = ranker_samples
        if pinned is None:
            post = samples.data.reshape(a, k, t, 2)
            if mode == "posterior":
                first = post
            else:
                with ad.no_grad():
                    prior = self._decode(h_x, eps[:, k:].reshape(a * k, cfg.d_z), batch, k)
                prior = prior.data.reshape(a, k, t, 2)
                first = prior if mode == "prior" else np.concatenate([post, prior], axis=1)
            inputs = [first]
        else:
            inputs = [np.asarray(y, dtype=np.float64) for y in pinned]
        ce_sel, reg_sel = (slice(k, None), slice(0, k)) if mode == "mixed" else (slice(None),) * 2
        n_pass = 1 + cfg.train_feedback
        ce = reg = None
        for c in range(n_pass):
            y4 = inputs[c]
            kr = y4.shape[1]
            scores, deltas, _ = ioc.score_and_refine(h_x, y4.reshape(a * kr, t, 2), batch.layout(kr),
                                                     fmap, store, cfg)
            scores = scores.reshape(a, kr)
            deltas = deltas.reshape(a, kr, t, 2)
            d = ioc.max_distance(y4[:, ce_sel], batch.future, batch.valid_len)
            ce_c = ioc.loss_ce(scores[:, ce_sel], d)
            reg_c = ioc.loss_reg(y4[:, reg_sel], deltas[:, reg_sel], batch.future, batch.valid_len)
            ce = ce_c if ce is None else ce + ce_c
            reg = reg_c if reg is None else reg + reg_c
            if pinned is None and c + 1 < n_pass:
                inputs.append(y4 + deltas.data)
        ce = ce * (1.0 / n_pass)
        reg = reg * (1.0 / n_pass)
        per_agent = recon + kld + ce + reg
        return {"recon": recon, "kld": kld, "ce": ce, "reg": reg,
                "total": ad.mean(per_agent), "samples": inputs}

    def loss(self, batch, noise):
        parts = self.losses(batch, noise)
        summary = {name: float(np.mean(parts[name].data)) for name in ("recon", "kld", "ce", "reg", "total")}
        return parts["total"], summary

    def sample(self, batch, k, rng, h_x=None):
        """K prior hypotheses per agent, (A, K, T, 2). Never reads the future."""
        cfg = self.cfg
        if h_x is None:
            h_x = cvae.encode_past(batch.past_rel, self.store, cfg.iota)
        a = batch.n_agents
        z = cvae.sample_prior(cfg.d_z, rng, a * k)
        return self._decode(h_x, z, batch, k).data.reshape(a, k, cfg.delta, 2)

    def predict(self, batch, k, n_iters, rng, samples=None):
        """Ranked (and ``n_iters`` times refined) hypotheses."""
        h_x, fmap = self._features(batch)
        if samples is None:
            samples = self.sample(batch, k, rng, h_x)
        a, k = samples.shape[:2]
        return ioc.iterate_feedback(h_x, samples.reshape(a * k, self.cfg.delta, 2),
                                    batch.layout(k), fmap, self.store, self.cfg, n_iters)


def gradient_check(net, batch, noise, eps=1e-5, detail=False, max_entries=None, rng=None):
    """Finite-difference check of the total loss with the ranker inputs pinned."""
    with ad.no_grad():
        pinned = net.losses(batch, noise)["samples"]
    return ad.finite_diff_check(lambda: net.losses(batch, noise, pinned)["total"], net.store,
                                eps, detail=detail, max_entries=max_entries, rng=rng)


def default_config_for(episodes, **overrides):
    ep = episodes[0]
    base = dict(iota=ep.iota, delta=ep.delta, dt=ep.dt, n_channels=ep.scene.channels)
    base.update(overrides)
    return ModelConfig(**base)

