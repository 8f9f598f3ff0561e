"""Gaussian-encoder, Bernoulli-decoder variational autoencoder core.

The pieces are deliberately small and pure: an encoder MLP whose output
splits into posterior means and log-variances, the reparameterization
draw, a sigmoid decoder whose probabilities are clamped before the
likelihood, and the analytic KL against the unit Gaussian. All loss
terms are reported as per-datapoint means in nats.

`elbo_with_grads` is the single training engine. The kernel-coupled
model reuses it unchanged by passing a hook that sees the posterior
means and may add an extra gradient onto them; with no hook it is the
plain single-sample ELBO.
"""

from __future__ import annotations

import numpy as np

from .config import LossBreakdown
from .errors import DimensionError
from .nn import INFERENCE, DropoutPlan, Mlp, mlp_backward, mlp_forward

P_LO = 1e-7
P_HI = 1.0 - 1e-7


def clamp_probs(p: np.ndarray) -> np.ndarray:
    """Clip probabilities into [P_LO, P_HI] so both logs stay finite."""
    return np.clip(p, P_LO, P_HI)


def split_encoder_output(out: np.ndarray):
    """First half of the columns are means, second half log-variances."""
    if out.shape[1] % 2 != 0:
        raise DimensionError(
            f"encoder output has {out.shape[1]} columns, expected an even count"
        )
    d = out.shape[1] // 2
    return out[:, :d], out[:, d:]


def encode(z_mlp: Mlp, y: np.ndarray, dropout: DropoutPlan = INFERENCE):
    out, _ = mlp_forward(z_mlp, y, dropout)
    return split_encoder_output(out)


def reparameterize(mu: np.ndarray, logvar: np.ndarray, eps: np.ndarray) -> np.ndarray:
    if eps.shape != mu.shape:
        raise DimensionError(
            f"eps shape {tuple(eps.shape)} does not match mu {tuple(mu.shape)}"
        )
    return mu + np.exp(0.5 * logvar) * eps


def decode(dec_mlp: Mlp, z: np.ndarray, dropout: DropoutPlan = INFERENCE) -> np.ndarray:
    p, _ = mlp_forward(dec_mlp, z, dropout)
    return p


def bernoulli_nll(p: np.ndarray, targets: np.ndarray) -> float:
    """Negative Bernoulli log-likelihood, summed over pixels, mean over rows."""
    if p.shape != targets.shape:
        raise DimensionError(
            f"probability shape {tuple(p.shape)} does not match targets "
            f"{tuple(targets.shape)}"
        )
    pc = clamp_probs(p)
    ll = targets * np.log(pc) + (1.0 - targets) * np.log(1.0 - pc)
    return float(-ll.sum() / p.shape[0])


def kl_unit_gaussian(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, diag exp(logvar)) || N(0, I)), mean over rows, in nats."""
    if mu.shape != logvar.shape:
        raise DimensionError(
            f"mu shape {tuple(mu.shape)} does not match logvar {tuple(logvar.shape)}"
        )
    per_row = -0.5 * (1.0 + logvar - mu * mu - np.exp(logvar))
    return float(per_row.sum() / mu.shape[0])


def vae_loss(z_mlp: Mlp, dec_mlp: Mlp, y: np.ndarray, eps: np.ndarray) -> LossBreakdown:
    """Single-sample negative ELBO terms at the given noise, dropout off."""
    losses, _ = elbo_forward(z_mlp, dec_mlp, y, eps)
    return losses


def elbo_forward(z_mlp: Mlp, dec_mlp: Mlp, y: np.ndarray, eps: np.ndarray,
                 mu_hook=None):
    """Forward-only loss evaluation; used by metrics passes.

    mu_hook, if given, receives the posterior means and returns the raw
    coupling penalty for the batch. Returns (LossBreakdown, aux) where
    aux carries mu, logvar and z for callers that embed or sample.
    """
    mu, logvar = encode(z_mlp, y)
    z = reparameterize(mu, logvar, eps)
    p = decode(dec_mlp, z)
    penalty = float(mu_hook(mu)) if mu_hook is not None else 0.0
    losses = LossBreakdown(bernoulli_nll(p, y), kl_unit_gaussian(mu, logvar), penalty)
    return losses, {"mu": mu, "logvar": logvar, "z": z, "p": p}


def elbo_with_grads(z_mlp: Mlp, dec_mlp: Mlp, y: np.ndarray, eps: np.ndarray,
                    drop_z: DropoutPlan = INFERENCE,
                    drop_dec: DropoutPlan = INFERENCE,
                    mu_hook=None):
    """Loss terms plus exact gradients for both networks.

    mu_hook, if given, is called once with the posterior means and must
    return (raw_penalty, extra_grad_on_mu_or_None); the extra gradient
    is added before the encoder backward pass, which is all the coupling
    penalty needs to reach the encoder. Returns (LossBreakdown, grads)
    with grads keyed "z_encoder.layer{i}.W" / "decoder.layer{i}.b" etc.
    """
    n = y.shape[0]
    if z_mlp.out_dim != 2 * dec_mlp.in_dim:
        raise DimensionError(
            f"encoder output dim {z_mlp.out_dim} must be twice the decoder "
            f"input dim {dec_mlp.in_dim}"
        )
    enc_out, enc_cache = mlp_forward(z_mlp, y, drop_z)
    mu, logvar = split_encoder_output(enc_out)
    z = reparameterize(mu, logvar, eps)
    p, dec_cache = mlp_forward(dec_mlp, z, drop_dec)

    pc = clamp_probs(p)
    inside = (p > P_LO) & (p < P_HI)
    nll = float(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum() / n)
    kl = kl_unit_gaussian(mu, logvar)

    penalty = 0.0
    dmu_extra = None
    if mu_hook is not None:
        penalty, dmu_extra = mu_hook(mu)

    # d(nll)/d(p); the clamp contributes zero gradient where it is active.
    dp = np.where(inside, (pc - y) / (pc * (1.0 - pc)), 0.0) / n
    dec_grads, dz = mlp_backward(dec_mlp, dec_cache, dp)

    sigma = np.exp(0.5 * logvar)
    dmu = dz + mu / n
    dlogvar = dz * (0.5 * sigma * eps) + 0.5 * (np.exp(logvar) - 1.0) / n
    if dmu_extra is not None:
        dmu = dmu + dmu_extra
    denc_out = np.concatenate([dmu, dlogvar], axis=1)
    enc_grads, _ = mlp_backward(z_mlp, enc_cache, denc_out)

    grads = {f"z_encoder.{k}": v for k, v in enc_grads.items()}
    grads.update({f"decoder.{k}": v for k, v in dec_grads.items()})
    return LossBreakdown(nll, kl, float(penalty)), grads
