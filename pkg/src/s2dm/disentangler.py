"""Siamese semantic/syntactic disentangler and its training losses.

Losses are sums over sentences and tokens; callers divide by batch size.
"""
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .distributions import (GaussParams, VmfNoise, VmfParams, draw_vmf_noise, gauss_sample,
                            kl_gauss_to_standard, kl_vmf_to_uniform, vmf_sample)
from .errors import ConfigError, ContractError
from .nn import Module, glorot, linear

LOSS_NAMES = ("rl", "kl", "crl", "sdl", "wpl", "pos", "stl")
VARIANTS = ("POS", "SP")
Z_MODES = ("pooled", "pooled_before", "token")


def resolve_losses(variant, siamese=True, losses=None):
    """Validate an enabled-loss set against the variant and network mode."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if losses is None:
        enabled = {"rl", "kl", "crl", "sdl", "wpl", "pos" if variant == "POS" else "stl"}
        if not siamese:
            enabled -= {"crl", "sdl"}
        return frozenset(enabled)
    enabled = set()
    for name in losses:
        if name == "vgvae":
            enabled |= {"rl", "kl"}
        elif name in LOSS_NAMES:
            enabled.add(name)
        else:
            raise ConfigError(f"unknown loss {name!r}")
    problems = []
    if variant == "POS" and "stl" in enabled:
        problems.append("stl is not part of the POS variant")
    if variant == "SP" and "pos" in enabled:
        problems.append("pos is not part of the SP variant")
    if not siamese:
        for name in sorted(enabled & {"crl", "sdl"}):
            problems.append(f"{name} needs the siamese pair (single-network mode)")
    if problems:
        raise ConfigError("; ".join(problems))
    return frozenset(enabled)


@dataclass
class DisentanglerConfig:
    in_dim: int
    vocab_size: int
    latent_dim: int = 200
    hidden: int = 256
    pos_hidden: int = 128
    max_len: int = 48
    n_tags: int = 17
    probe_rank: int = 64
    delta: float = 0.4
    variant: str = "SP"
    siamese: bool = True
    z_mode: str = "pooled"
    fixed_kappa: float = None
    kappa_init: float = 10.0
    logvar_init: float = -2.0

    def validate(self):
        if self.z_mode not in Z_MODES:
            raise ConfigError(f"z_mode must be one of {Z_MODES}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.fixed_kappa is not None and self.fixed_kappa < 0:
            raise ConfigError("fixed_kappa must be non-negative")


@dataclass
class LatentNoise:
    vmf: VmfNoise
    eps_tok: np.ndarray
    eps_pooled: np.ndarray


@dataclass
class LatentOutputs:
    y_tok: T.Tensor        # (B, L, D) unit vectors
    z_tok: T.Tensor        # (B, L, D)
    y: T.Tensor            # (B, D) masked token mean
    z: T.Tensor            # (B, D)
    vmf: VmfParams
    gauss: GaussParams
    mask: np.ndarray
    noise: LatentNoise = field(repr=False, default=None)


@dataclass
class SideBatch:
    """One language's half of a stage-1 batch. Arrays are padded to L."""
    e: T.Tensor            # (B, L, E) encoder output, constant in stage 1
    mask: np.ndarray       # (B, L)
    bow: np.ndarray        # (B, V) token counts
    upos: np.ndarray       # (B, L) tag ids, -1 at padding
    depth: np.ndarray      # (B, L)
    dist: np.ndarray       # (B, L, L)

    @property
    def lengths(self):
        return self.mask.sum(axis=1)


@dataclass
class PairBatch:
    s: SideBatch
    t: SideBatch
    two_way: np.ndarray    # (B,) bool

    def __len__(self):
        return len(self.two_way)


def masked_mean(x, mask):
    m = mask[..., None]
    return T.tsum(x * m, axis=1) / m.sum(axis=1)


class SiameseDisentangler(Module):
    """Inference networks, bag-of-words decoder, position net, POS layer and probe.

    The source and target branches are two views over one parameter dict.
    """

    def __init__(self, config, seed=0):
        super().__init__()
        config.validate()
        self.config = c = config
        rng = np.random.default_rng(seed)
        E, H, D = c.in_dim, c.hidden, c.latent_dim
        self.add_param("sem.w1", glorot(rng, E, H))
        self.add_param("sem.b1", np.zeros(H))
        self.add_param("sem.w_mu", glorot(rng, H, D))
        self.add_param("sem.b_mu", np.zeros(D))
        self.add_param("sem.w_kappa", glorot(rng, H, 1) * 0.1)
        self.add_param("sem.b_kappa", np.full(1, np.log(np.expm1(c.kappa_init))))
        self.add_param("syn.w1", glorot(rng, E, H))
        self.add_param("syn.b1", np.zeros(H))
        self.add_param("syn.w_mu", glorot(rng, H, D))
        self.add_param("syn.b_mu", np.zeros(D))
        self.add_param("syn.w_logvar", glorot(rng, H, D) * 0.1)
        self.add_param("syn.b_logvar", np.full(D, c.logvar_init))
        self.add_param("dec.w", glorot(rng, 2 * D, c.vocab_size))
        self.add_param("dec.b", np.zeros(c.vocab_size))
        F = E + D
        self.add_param("wpl.w1", glorot(rng, F, c.pos_hidden))
        self.add_param("wpl.b1", np.zeros(c.pos_hidden))
        self.add_param("wpl.w2", glorot(rng, c.pos_hidden, c.pos_hidden))
        self.add_param("wpl.b2", np.zeros(c.pos_hidden))
        self.add_param("wpl.w3", glorot(rng, c.pos_hidden, c.max_len))
        self.add_param("wpl.b3", np.zeros(c.max_len))
        self.add_param("pos.w", glorot(rng, F, c.n_tags))
        self.add_param("pos.b", np.zeros(c.n_tags))
        self.add_param("probe.B", rng.normal(0.0, 1.0 / np.sqrt(F), (F, c.probe_rank)))

    # -- branches -------------------------------------------------------------
    @property
    def source(self):
        return _Branch(self, "s")

    @property
    def target(self):
        return _Branch(self, "t")

    # -- inference -------------------------------------------------------------
    def semantic_params(self, e, mask=None):
        """vMF parameters per token; padded rows (mask 0) get the north pole."""
        p = self.params
        h = T.tanh(linear(e, p["sem.w1"], p["sem.b1"]))
        raw = linear(h, p["sem.w_mu"], p["sem.b_mu"])
        mu = raw / T.sqrt(T.tsum(raw * raw, axis=-1, keepdims=True) + 1e-300)
        if mask is not None:
            m = np.asarray(mask, dtype=np.float64)[..., None]
            pole = np.zeros(mu.shape[-1])
            pole[0] = 1.0
            mu = mu * m + pole * (1.0 - m)
        if self.config.fixed_kappa is not None:
            kappa = T.Tensor(np.full(mu.shape[:-1], float(self.config.fixed_kappa)))
        else:
            kappa = T.softplus(linear(h, p["sem.w_kappa"], p["sem.b_kappa"]))[..., 0]
        return VmfParams(mu, kappa)

    def syntactic_params(self, e):
        p = self.params
        h = T.tanh(linear(e, p["syn.w1"], p["syn.b1"]))
        mu = linear(h, p["syn.w_mu"], p["syn.b_mu"])
        logvar = linear(h, p["syn.w_logvar"], p["syn.b_logvar"])
        return GaussParams.from_logvar(mu, logvar)

    def draw_noise(self, vmf, rng):
        D = self.config.latent_dim
        shape = vmf.kappa.shape
        return LatentNoise(draw_vmf_noise(vmf.kappa.data, D, rng),
                           rng.standard_normal(shape + (D,)),
                           rng.standard_normal((shape[0], D)))

    def infer(self, e, mask, rng=None, noise=None):
        """Sample per-token y_i, z_i and pool them into sentence vectors."""
        if e.shape[1] == 0 or not np.all(np.asarray(mask).sum(axis=1) > 0):
            raise ContractError("infer needs non-empty sentences")
        mask = np.asarray(mask, dtype=np.float64)
        vmf = self.semantic_params(e, mask)
        gauss = self.syntactic_params(e)
        if noise is None:
            if rng is None:
                raise ContractError("infer needs an rng or frozen noise")
            noise = self.draw_noise(vmf, rng)
        y_tok = vmf_sample(vmf, noise=noise.vmf)
        z_tok = gauss_sample(gauss, eps=noise.eps_tok)
        y = masked_mean(y_tok, mask)
        if self.config.z_mode == "pooled_before":
            mu_p = masked_mean(gauss.mu, mask)
            s2_p = masked_mean(gauss.sigma2, mask)
            z = mu_p + T.sqrt(s2_p) * noise.eps_pooled
        else:
            z = masked_mean(z_tok, mask)
        return LatentOutputs(y_tok, z_tok, y, z, vmf, gauss, mask, noise)

    # -- heads -----------------------------------------------------------------
    def decode_logits(self, y, z):
        return linear(T.concat([y, z], axis=-1), self.params["dec.w"], self.params["dec.b"])

    def token_features(self, e, lat):
        """h_i = [e_i; z] with z pooled (default) or per token."""
        if self.config.z_mode == "token":
            zz = lat.z_tok
        else:
            zz = T.broadcast_to(T.reshape(lat.z, (lat.z.shape[0], 1, lat.z.shape[1])),
                                e.shape[:2] + (lat.z.shape[1],))
        return T.concat([e, zz], axis=-1)

    def position_logits(self, h):
        p = self.params
        a = T.tanh(linear(h, p["wpl.w1"], p["wpl.b1"]))
        a = T.tanh(linear(a, p["wpl.w2"], p["wpl.b2"]))
        return linear(a, p["wpl.w3"], p["wpl.b3"])

    def tag_logits(self, h):
        return linear(h, self.params["pos.w"], self.params["pos.b"])

    def probe(self, h):
        return T.matmul(h, self.params["probe.B"])


class _Branch:
    def __init__(self, model, side):
        self.model = model
        self.side = side
        self.params = model.params

    def infer(self, e, mask, rng=None, noise=None):
        return self.model.infer(e, mask, rng=rng, noise=noise)


# ---------------------------------------------------------------------------- losses

def bow_nll(model, y, z, bow):
    bow = np.asarray(bow, dtype=np.float64)
    if bow.shape[-1] != model.config.vocab_size:
        raise ContractError(f"bag-of-words width {bow.shape[-1]} != vocab {model.config.vocab_size}")
    lp = T.log_softmax(model.decode_logits(y, z), axis=-1)
    return -T.tsum(lp * bow)


def loss_reconstruction(model, lat_s, lat_t, bow_s, bow_t):
    return bow_nll(model, lat_s.y, lat_s.z, bow_s) + bow_nll(model, lat_t.y, lat_t.z, bow_t)


def loss_crl(model, lat_s, lat_t, bow_s, bow_t):
    """Rebuild each sentence from the other language's y and its own z."""
    return bow_nll(model, lat_t.y, lat_s.z, bow_s) + bow_nll(model, lat_s.y, lat_t.z, bow_t)


def loss_kl_side(lat):
    kv = kl_vmf_to_uniform(lat.vmf)
    kg = kl_gauss_to_standard(lat.gauss)
    return T.tsum((kv + kg) * lat.mask)


def loss_kl(lat_s, lat_t):
    return loss_kl_side(lat_s) + loss_kl_side(lat_t)


def mine_negatives(y_s, y_t, two_way):
    """Hardest eligible negatives by cosine; eligible = other 2-way-parallel pairs."""
    a = y_s / np.linalg.norm(y_s, axis=1, keepdims=True)
    b = y_t / np.linalg.norm(y_t, axis=1, keepdims=True)
    sim = a @ b.T
    n = len(sim)
    elig = np.asarray(two_way, dtype=bool)[None, :] & ~np.eye(n, dtype=bool)
    rows = elig.any(axis=1)
    neg_t = np.argmax(np.where(elig, sim, -np.inf), axis=1)
    neg_s = np.argmax(np.where(elig, sim.T, -np.inf), axis=1)
    return neg_t, neg_s, rows


def loss_sdl(y_s, y_t, two_way, delta=0.4):
    """Margin loss on pooled semantic vectors. Returns (loss, n_skipped_pairs)."""
    if y_s.shape[0] < 2:
        raise ContractError("semantic discrimination needs at least two pairs")
    neg_t, neg_s, rows = mine_negatives(y_s.data, y_t.data, two_way)
    skipped = int((~rows).sum())
    idx = np.flatnonzero(rows)
    if idx.size == 0:
        return T.Tensor(0.0), skipped
    ys, yt = y_s[idx], y_t[idx]
    pos = T.cosine_similarity(ys, yt)
    hinge_t = T.maximum(delta - pos + T.cosine_similarity(ys, y_t[neg_t[idx]]), 0.0)
    hinge_s = T.maximum(delta - pos + T.cosine_similarity(y_s[neg_s[idx]], yt), 0.0)
    return T.tsum(hinge_t + hinge_s), skipped


def loss_wpl(model, e, lat):
    """Per-sentence mean of -log p(position i | [e_i; z]), summed over sentences."""
    mask = lat.mask
    if e.shape[1] > model.config.max_len:
        raise ContractError(f"sentence length {e.shape[1]} exceeds {model.config.max_len} position classes")
    lp = T.log_softmax(model.position_logits(model.token_features(e, lat)), axis=-1)
    b, i = np.nonzero(mask)
    w = 1.0 / mask.sum(axis=1)[b]
    return -T.tsum(lp[b, i, i] * w)


def loss_pos(model, e, lat, upos):
    upos = np.asarray(upos)
    b, i = np.nonzero(lat.mask)
    tags = upos[b, i]
    if np.any((tags < 0) | (tags >= model.config.n_tags)):
        raise ContractError(f"POS tag ids must lie in [0, {model.config.n_tags})")
    lp = T.log_softmax(model.tag_logits(model.token_features(e, lat)), axis=-1)
    return -T.tsum(lp[b, i, tags])


def stl_terms(bh, mask, depth, dist):
    """Depth and distance probe losses from projected features ``bh`` (B, L, k)."""
    mask = np.asarray(mask, dtype=np.float64)
    sq = T.tsum(bh * bh, axis=-1)
    l_depth = T.tsum(T.tabs(depth - sq) * mask)
    gram = T.matmul(bh, T.swapaxes(bh, -1, -2))
    L = mask.shape[1]
    d_b = T.reshape(sq, sq.shape + (1,)) + T.reshape(sq, (sq.shape[0], 1, L)) - 2.0 * gram
    pair = mask[:, :, None] * mask[:, None, :] * (1.0 - np.eye(L))[None]
    l_dist = T.tsum(T.tabs(dist - d_b) * pair)
    return l_depth, l_dist


def loss_stl(model, e, lat, depth, dist):
    bh = model.probe(model.token_features(e, lat))
    l_depth, l_dist = stl_terms(bh, lat.mask, depth, dist)
    return l_depth + l_dist


def side_losses(model, side, lat, enabled):
    out = {}
    if "wpl" in enabled:
        out["wpl"] = loss_wpl(model, side.e, lat)
    if "pos" in enabled:
        out["pos"] = loss_pos(model, side.e, lat, side.upos)
    if "stl" in enabled:
        out["stl"] = loss_stl(model, side.e, lat, side.depth, side.dist)
    return out


def total_loss(model, batch, enabled, rng=None, noise=None):
    """Sum of the enabled losses over one pair batch.

    Returns ``(total, report, extras)``; ``report`` maps every loss name to a
    float (0.0 when disabled) and ``extras`` carries the latents and the
    frozen noise so a call can be replayed exactly.
    """
    enabled = frozenset(enabled)
    if not model.config.siamese and enabled & {"crl", "sdl"}:
        raise ConfigError("single-network mode cannot use crl/sdl")
    noise = noise or {}
    lat_s = model.source.infer(batch.s.e, batch.s.mask, rng=rng, noise=noise.get("s"))
    lat_t = model.target.infer(batch.t.e, batch.t.mask, rng=rng, noise=noise.get("t"))
    parts = {}
    if "rl" in enabled:
        parts["rl"] = loss_reconstruction(model, lat_s, lat_t, batch.s.bow, batch.t.bow)
    if "kl" in enabled:
        parts["kl"] = loss_kl(lat_s, lat_t)
    if "crl" in enabled:
        parts["crl"] = loss_crl(model, lat_s, lat_t, batch.s.bow, batch.t.bow)
    skipped = 0
    if "sdl" in enabled:
        parts["sdl"], skipped = loss_sdl(lat_s.y, lat_t.y, batch.two_way, model.config.delta)
    for side, lat in ((batch.s, lat_s), (batch.t, lat_t)):
        for k, v in side_losses(model, side, lat, enabled).items():
            parts[k] = parts[k] + v if k in parts else v
    total = T.Tensor(0.0)
    for name in LOSS_NAMES:
        if name in parts:
            total = total + parts[name]
    report = {name: float(parts[name].data) if name in parts else 0.0 for name in LOSS_NAMES}
    report["total"] = float(total.data)
    report["sdl_skipped"] = skipped
    extras = {"s": lat_s, "t": lat_t, "noise": {"s": lat_s.noise, "t": lat_t.noise}}
    return total, report, extras
