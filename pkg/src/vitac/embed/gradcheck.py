"""Finite-difference verification of the autoencoder's analytic gradients.

Stop-gradients and the straight-through quantizer make the analytic gradient
differ from the derivative of the plain loss value. The oracle therefore
differentiates a forward-only surrogate in which every detached quantity is
frozen at its value at the base point:

* the decoder reads ``z(theta) + (z_q0 - z0)``, so recon sees ``z_q`` move with ``z``;
* the codebook term compares the frozen ``z0`` with the live selected code rows;
* the commitment term compares the live ``z`` with the frozen ``z_q0``.

The surrogate equals the true loss at the base point, and its exact derivative
is the routed gradient the training loop applies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GradientMismatch
from .model import (
    NetworkConfig,
    decoder_forward,
    decoder_inputs,
    encoder_features,
    forward_backward,
    init_params,
    is_encoder_param,
    kl_standard_normal,
)

SMALL_CONFIG = NetworkConfig(
    input_dim=3, enc_hidden=4, dec_hidden=4, latent_dim=2, codebook_size=4
)


def _surrogate_terms(params, cfg: NetworkConfig, X, Xbar, frozen, eps):
    feat, _ = encoder_features(params, cfg, X)
    dec_in = decoder_inputs(cfg, X, Xbar)
    if cfg.bottleneck == "vq":
        z = feat @ params["enc.out.W"].T + params["enc.out.b"]
        z0, zq0, idx0 = frozen
        Y, _ = decoder_forward(params, cfg, z + (zq0 - z0), dec_in)
        return {
            "recon": np.mean((Y - Xbar) ** 2),
            "vq": np.mean((z0 - params["codebook"][idx0]) ** 2),
            "commit": np.mean((z - zq0) ** 2),
        }
    mu = feat @ params["enc.mu.W"].T + params["enc.mu.b"]
    logvar = feat @ params["enc.logvar.W"].T + params["enc.logvar.b"]
    z = mu if eps is None else mu + np.exp(0.5 * logvar) * eps
    Y, _ = decoder_forward(params, cfg, z, dec_in)
    return {"recon": np.mean((Y - Xbar) ** 2), "kl": kl_standard_normal(mu, logvar).mean()}


def _total(cfg: NetworkConfig, terms: dict) -> float:
    if cfg.bottleneck == "vq":
        return terms["recon"] + terms["vq"] + cfg.beta * terms["commit"]
    return terms["recon"] + cfg.betavae_kl_weight * terms["kl"]


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    routing: dict[str, bool] = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tolerance and all(self.routing.values())


def relative_error(analytic, numeric) -> float:
    """Norm-wise relative error of one parameter tensor.

    Element-wise ratios are dominated by finite-difference rounding noise on
    entries whose gradient is close to zero, so the tensor is compared as a whole.
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradient_check(
    cfg: NetworkConfig = SMALL_CONFIG,
    tolerance: float = 1e-5,
    *,
    seq_len: int = 5,
    batch: int = 3,
    h: float = 1e-4,
    seed: int = 0,
    raise_on_fail: bool = True,
) -> GradCheckReport:
    """Compare analytic gradients with central differences in float64."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng, dtype=np.float64)
    # nonzero biases so every parameter has a nontrivial gradient
    for name, p in params.items():
        if p.ndim == 1:
            p[:] = rng.normal(0.0, 0.3, p.shape)
    if cfg.bottleneck == "vq":
        params["codebook"][:] = rng.normal(0.0, 0.5, params["codebook"].shape)
    X = rng.normal(size=(seq_len, batch, cfg.input_dim))
    Xbar = rng.normal(size=(seq_len, batch, cfg.input_dim))
    eps = rng.normal(size=(batch, cfg.latent_dim)) if cfg.bottleneck == "betavae" else None

    base = forward_backward(params, cfg, X, Xbar, eps=eps)
    frozen = (base.z.copy(), base.z_q.copy(), base.code_index.copy()) if cfg.bottleneck == "vq" else None

    report = GradCheckReport(0.0, tolerance=tolerance)
    for name, p in params.items():
        num = np.empty_like(p)
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + h
            up = _total(cfg, _surrogate_terms(params, cfg, X, Xbar, frozen, eps))
            p[i] = orig - h
            down = _total(cfg, _surrogate_terms(params, cfg, X, Xbar, frozen, eps))
            p[i] = orig
            num[i] = (up - down) / (2 * h)
        err = relative_error(base.grads[name], num)
        report.per_param[name] = err
        report.max_rel_error = max(report.max_rel_error, err)

    if cfg.bottleneck == "vq":
        only = {
            term: forward_backward(params, cfg, X, Xbar, weights=w).grads
            for term, w in (("recon", (1, 0, 0)), ("vq", (0, 1, 0)), ("commit", (0, 0, 1)))
        }
        report.routing = {
            "recon_codebook_zero": bool(np.all(only["recon"]["codebook"] == 0)),
            "commit_codebook_zero": bool(np.all(only["commit"]["codebook"] == 0)),
            "vq_encoder_zero": all(np.all(g == 0) for k, g in only["vq"].items() if is_encoder_param(k)),
            "recon_encoder_nonzero": any(np.any(g != 0) for k, g in only["recon"].items() if is_encoder_param(k)),
        }

    if raise_on_fail and not report.ok:
        failing = {k: v for k, v in report.per_param.items() if v >= tolerance}
        failing.update({k: float("nan") for k, ok in report.routing.items() if not ok})
        raise GradientMismatch(failing)
    return report

