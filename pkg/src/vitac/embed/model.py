"""Sequence-to-sequence tactile autoencoder with a quantized bottleneck.

Parameters live in a flat ``dict[str, ndarray]`` so the optimizer, checkpoint
writer and gradient checker can walk them uniformly. All forward functions
take time-major batches ``(T, B, D)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .gru import gru_backward, gru_forward

BOTTLENECKS = ("vq", "betavae")
DECODER_INPUTS = ("raw", "smoothed", "none")


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 96
    enc_layers: int = 2
    enc_hidden: int = 32
    bidirectional: bool = True
    latent_dim: int = 4
    codebook_size: int = 32
    dec_layers: int = 2
    dec_hidden: int = 32
    beta: float = 0.25
    bottleneck: str = "vq"
    betavae_kl_weight: float = 0.25
    # what the decoder reads at each step; with teacher_shift, step t sees frame t-1
    decoder_input: str = "raw"
    teacher_shift: bool = True
    input_norm: str = "global"

    def __post_init__(self):
        dims = [self.input_dim, self.enc_layers, self.enc_hidden, self.latent_dim,
                self.codebook_size, self.dec_layers, self.dec_hidden]
        if min(dims) <= 0:
            raise ValueError("all network dimensions must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.bottleneck not in BOTTLENECKS:
            raise ValueError(f"bottleneck must be one of {BOTTLENECKS}")
        if self.decoder_input not in DECODER_INPUTS:
            raise ValueError(f"decoder_input must be one of {DECODER_INPUTS}")
        if self.input_norm not in ("none", "global", "per_channel"):
            raise ValueError("input_norm must be none, global or per_channel")

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    vq: float = 0.0
    commit: float = 0.0
    kl: float = 0.0
    total: float = 0.0

    @classmethod
    def combine(cls, recon, vq=0.0, commit=0.0, kl=0.0, *, beta=0.25, kl_weight=0.0):
        total = recon + vq + beta * commit + kl_weight * kl
        return cls(float(recon), float(vq), float(commit), float(kl), float(total))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def param_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes; the order fixes the init draw order."""
    shapes: dict[str, tuple[int, ...]] = {}
    H = cfg.enc_hidden
    in_dim = cfg.input_dim
    for l in range(cfg.enc_layers):
        for d in cfg.directions:
            p = f"enc.l{l}.{d}."
            shapes[p + "W_ih"] = (3 * H, in_dim)
            shapes[p + "W_hh"] = (3 * H, H)
            shapes[p + "b_ih"] = (3 * H,)
            shapes[p + "b_hh"] = (3 * H,)
        in_dim = H * len(cfg.directions)
    feat = H * len(cfg.directions)
    if cfg.bottleneck == "vq":
        shapes["enc.out.W"] = (cfg.latent_dim, feat)
        shapes["enc.out.b"] = (cfg.latent_dim,)
        shapes["codebook"] = (cfg.codebook_size, cfg.latent_dim)
    else:
        shapes["enc.mu.W"] = (cfg.latent_dim, feat)
        shapes["enc.mu.b"] = (cfg.latent_dim,)
        shapes["enc.logvar.W"] = (cfg.latent_dim, feat)
        shapes["enc.logvar.b"] = (cfg.latent_dim,)
    Hd = cfg.dec_hidden
    shapes["dec.init.W"] = (Hd, cfg.latent_dim)
    shapes["dec.init.b"] = (Hd,)
    in_dim = cfg.input_dim
    for l in range(cfg.dec_layers):
        p = f"dec.l{l}."
        shapes[p + "W_ih"] = (3 * Hd, in_dim)
        shapes[p + "W_hh"] = (3 * Hd, Hd)
        shapes[p + "b_ih"] = (3 * Hd,)
        shapes[p + "b_hh"] = (3 * Hd,)
        in_dim = Hd
    shapes["dec.out.W"] = (cfg.input_dim, Hd)
    shapes["dec.out.b"] = (cfg.input_dim,)
    return shapes


def init_params(cfg: NetworkConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "codebook":
            k = cfg.codebook_size
            params[name] = rng.uniform(-1.0 / k, 1.0 / k, size=shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = _uniform(rng, shape, shape[1])
    return {k: v.astype(dtype) for k, v in params.items()}


def is_encoder_param(name: str) -> bool:
    return name.startswith("enc.")


def is_decoder_param(name: str) -> bool:
    return name.startswith("dec.")


def _gru(params, prefix):
    return params[prefix + "W_ih"], params[prefix + "W_hh"], params[prefix + "b_ih"], params[prefix + "b_hh"]


def check_batch(cfg: NetworkConfig, X: np.ndarray) -> None:
    if X.ndim != 3 or X.shape[2] != cfg.input_dim:
        raise ShapeMismatch(f"expected (T, B, {cfg.input_dim}) batch, got {X.shape}")


# ---------------------------------------------------------------- encoder


@dataclass
class EncoderCache:
    layers: list = field(default_factory=list)  # per layer: {direction: GRUCache}
    feat: np.ndarray | None = None


def encoder_features(params, cfg: NetworkConfig, X, keep_cache=False):
    """Top-layer final states: forward at t=T concatenated with backward at t=1."""
    check_batch(cfg, X)
    T, B, _ = X.shape
    inp = X
    cache = EncoderCache()
    for l in range(cfg.enc_layers):
        h0 = np.zeros((B, cfg.enc_hidden), dtype=X.dtype)
        outs, finals, caches = [], [], {}
        for d in cfg.directions:
            seq = inp if d == "fwd" else inp[::-1]
            hs, c = gru_forward(seq, h0, *_gru(params, f"enc.l{l}.{d}."), keep_cache=keep_cache)
            finals.append(hs[-1])
            outs.append(hs if d == "fwd" else hs[::-1])
            caches[d] = c
        cache.layers.append(caches)
        inp = np.concatenate(outs, axis=-1)
    feat = np.concatenate(finals, axis=-1)
    cache.feat = feat
    return feat, cache


def encoder_backward(params, cfg: NetworkConfig, dfeat, cache: EncoderCache, grads):
    H = cfg.enc_hidden
    dirs = cfg.directions
    T, B, _ = cache.layers[0]["fwd"].x.shape
    # gradient w.r.t. each direction's hidden sequence, in that direction's own time order
    dseq = {}
    for i, d in enumerate(dirs):
        g = np.zeros((T, B, H), dtype=dfeat.dtype)
        g[-1] = dfeat[:, i * H : (i + 1) * H]
        dseq[d] = g
    for l in reversed(range(cfg.enc_layers)):
        dinp = None
        for d in dirs:
            p = f"enc.l{l}.{d}."
            dx, _, g = gru_backward(dseq[d], cache.layers[l][d], params[p + "W_ih"], params[p + "W_hh"])
            for k, v in g.items():
                grads[p + k] += v
            if d == "bwd":
                dx = dx[::-1]
            dinp = dx if dinp is None else dinp + dx
        if l > 0:
            for i, d in enumerate(dirs):
                part = dinp[:, :, i * H : (i + 1) * H]
                dseq[d] = part if d == "fwd" else part[::-1]


def encode_latent(params, cfg: NetworkConfig, X):
    """Deterministic latent: ``z`` for VQ, the posterior mean for the beta-VAE."""
    feat, _ = encoder_features(params, cfg, X)
    if cfg.bottleneck == "vq":
        return feat @ params["enc.out.W"].T + params["enc.out.b"]
    return feat @ params["enc.mu.W"].T + params["enc.mu.b"]


def quantize(z, codebook):
    """Nearest codebook row per latent; ties go to the lowest index."""
    z = np.atleast_2d(z)
    d2 = ((z[:, None, :] - codebook[None, :, :]) ** 2).sum(-1)
    idx = np.argmin(d2, axis=1)
    return codebook[idx], idx


# ---------------------------------------------------------------- decoder


def decoder_inputs(cfg: NetworkConfig, X, Xbar):
    if cfg.decoder_input == "none":
        return np.zeros_like(X)
    src = X if cfg.decoder_input == "raw" else Xbar
    if not cfg.teacher_shift:
        return src
    out = np.zeros_like(src)
    out[1:] = src[:-1]
    return out


def decoder_forward(params, cfg: NetworkConfig, latent, dec_in, keep_cache=False):
    h0 = latent @ params["dec.init.W"].T + params["dec.init.b"]
    inp = dec_in
    caches = []
    for l in range(cfg.dec_layers):
        hs, c = gru_forward(inp, h0, *_gru(params, f"dec.l{l}."), keep_cache=keep_cache)
        caches.append(c)
        inp = hs
    Y = inp @ params["dec.out.W"].T + params["dec.out.b"]
    return Y, (latent, inp, caches)


def decoder_backward(params, cfg: NetworkConfig, dY, cache, grads):
    """Accumulate decoder grads; return dL/d(latent fed to the decoder)."""
    latent, top, caches = cache
    grads["dec.out.W"] += np.einsum("tbo,tbh->oh", dY, top)
    grads["dec.out.b"] += dY.sum((0, 1))
    dhs = dY @ params["dec.out.W"]
    dh0 = np.zeros_like(latent @ params["dec.init.W"].T)
    for l in reversed(range(cfg.dec_layers)):
        p = f"dec.l{l}."
        dx, dh0_l, g = gru_backward(dhs, caches[l], params[p + "W_ih"], params[p + "W_hh"])
        for k, v in g.items():
            grads[p + k] += v
        dh0 += dh0_l
        dhs = dx
    grads["dec.init.W"] += dh0.T @ latent
    grads["dec.init.b"] += dh0.sum(0)
    return dh0 @ params["dec.init.W"]


# ---------------------------------------------------------------- full pass


@dataclass
class ForwardResult:
    loss: LossBreakdown
    z: np.ndarray
    z_q: np.ndarray | None = None
    code_index: np.ndarray | None = None
    recon: np.ndarray | None = None
    grads: dict | None = None


def forward_backward(
    params,
    cfg: NetworkConfig,
    X,
    Xbar,
    *,
    eps=None,
    weights=(1.0, 1.0, 1.0),
    need_grads=True,
):
    """Loss and (optionally) gradients for one batch.

    ``weights`` scales the backward pass of the (recon, vq, commit) terms for
    the VQ bottleneck or (recon, kl, unused) for the beta-VAE, which lets the
    gradient checker isolate each term's routing. ``eps`` is the
    reparameterization noise for the beta-VAE; ``None`` means use the mean.
    """
    check_batch(cfg, X)
    if Xbar.shape != X.shape:
        raise ShapeMismatch(f"target shape {Xbar.shape} != input shape {X.shape}")
    feat, ecache = encoder_features(params, cfg, X, keep_cache=need_grads)
    dec_in = decoder_inputs(cfg, X, Xbar)
    w_rec, w_2, w_3 = weights
    grads = {k: np.zeros_like(v) for k, v in params.items()} if need_grads else None
    B = X.shape[1]

    if cfg.bottleneck == "vq":
        z = feat @ params["enc.out.W"].T + params["enc.out.b"]
        z_q, idx = quantize(z, params["codebook"])
        Y, dcache = decoder_forward(params, cfg, z_q, dec_in, keep_cache=need_grads)
        diff = z - z_q
        dist = float(np.mean(diff * diff))
        recon = float(np.mean((Y - Xbar) ** 2))
        loss = LossBreakdown.combine(recon, dist, dist, beta=cfg.beta)
        result = ForwardResult(loss, z, z_q, idx, Y)
        if need_grads:
            dY = (2.0 * w_rec / Y.size) * (Y - Xbar)
            dzq = decoder_backward(params, cfg, dY, dcache, grads)
            # straight-through: the quantizer passes dz_q to z unchanged
            dz = dzq + (w_3 * cfg.beta * 2.0 / diff.size) * diff
            np.add.at(grads["codebook"], idx, (-w_2 * 2.0 / diff.size) * diff)
            grads["enc.out.W"] += dz.T @ feat
            grads["enc.out.b"] += dz.sum(0)
            dfeat = dz @ params["enc.out.W"]
            encoder_backward(params, cfg, dfeat, ecache, grads)
    else:
        mu = feat @ params["enc.mu.W"].T + params["enc.mu.b"]
        logvar = feat @ params["enc.logvar.W"].T + params["enc.logvar.b"]
        std = np.exp(0.5 * logvar)
        z = mu if eps is None else mu + std * eps
        Y, dcache = decoder_forward(params, cfg, z, dec_in, keep_cache=need_grads)
        recon = float(np.mean((Y - Xbar) ** 2))
        kl = float(kl_standard_normal(mu, logvar).mean())
        loss = LossBreakdown.combine(recon, kl=kl, beta=cfg.beta, kl_weight=cfg.betavae_kl_weight)
        result = ForwardResult(loss, z, recon=Y)
        if need_grads:
            dY = (2.0 * w_rec / Y.size) * (Y - Xbar)
            dz = decoder_backward(params, cfg, dY, dcache, grads)
            kw = w_2 * cfg.betavae_kl_weight / B
            dmu = dz + kw * mu
            dlogvar = kw * 0.5 * (np.exp(logvar) - 1.0)
            if eps is not None:
                dlogvar = dlogvar + dz * eps * 0.5 * std
            grads["enc.mu.W"] += dmu.T @ feat
            grads["enc.mu.b"] += dmu.sum(0)
            grads["enc.logvar.W"] += dlogvar.T @ feat
            grads["enc.logvar.b"] += dlogvar.sum(0)
            dfeat = dmu @ params["enc.mu.W"] + dlogvar @ params["enc.logvar.W"]
            encoder_backward(params, cfg, dfeat, ecache, grads)
    result.grads = grads
    return result


def kl_standard_normal(mu, logvar):
    """Per-sample ``KL(N(mu, exp(logvar)) || N(0, I))`` summed over latent dims."""
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=-1)
