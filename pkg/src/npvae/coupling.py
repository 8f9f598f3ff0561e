"""Kernel coupling between the low-dimensional X space and the VAE latent Z.

A deterministic encoder places every observation at a location x in a
small (default 2-D) space. A squared-exponential kernel over those
locations, with its diagonal removed and rows normalized, gives a
weight matrix W whose row i is a convex combination over the other
batch members. W times the posterior means is a leave-one-out
prediction z-tilde of each latent from its neighbours, and the training
penalty is the mean squared distance between the posterior means and
that prediction. Because the rows are normalized, the kernel amplitude
cancels exactly, so the only kernel parameter is the log lengthscale.

All gradients here are written out by hand; `penalty_with_grads` is the
backward pass of the penalty with respect to the posterior means, the X
locations, and the log lengthscale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import LossBreakdown
from .errors import DimensionError, ValidationError
from .nn import INFERENCE, DropoutPlan, Mlp, mlp_backward, mlp_forward
from .ops import matmul, pairwise_sqdist, row_softmax_masked
from .vae import decode, elbo_forward, elbo_with_grads, encode


@dataclass
class KernelParams:
    """log_lengthscale is a (1,1) array so the optimizer treats it like any block."""

    log_lengthscale: np.ndarray

    def __post_init__(self):
        self.log_lengthscale = np.asarray(self.log_lengthscale, dtype=np.float64)
        self.log_lengthscale = self.log_lengthscale.reshape(1, 1)

    @classmethod
    def initial(cls) -> "KernelParams":
        return cls(np.zeros((1, 1)))

    @property
    def value(self) -> float:
        return float(self.log_lengthscale[0, 0])

    @property
    def lengthscale(self) -> float:
        return float(np.exp(self.value))


def kernel_weights(x: np.ndarray, kp: KernelParams) -> np.ndarray:
    """Leave-one-out convex weights: softmax over -d^2/(2 l^2), diagonal zero."""
    d2 = pairwise_sqdist(x)
    inv_l2 = np.exp(-2.0 * kp.value)
    return row_softmax_masked(-0.5 * inv_l2 * d2)


def cross_kernel_weights(x_query: np.ndarray, x_ref: np.ndarray,
                         kp: KernelParams) -> np.ndarray:
    """Convex weights of each query over ALL reference rows (no self-masking)."""
    if x_ref.shape[0] < 1:
        raise ValidationError("reference set is empty")
    if x_query.shape[1] != x_ref.shape[1]:
        raise DimensionError(
            f"query dim {x_query.shape[1]} does not match reference dim "
            f"{x_ref.shape[1]}"
        )
    diff = x_query[:, None, :] - x_ref[None, :, :]
    d2 = np.einsum("qmk,qmk->qm", diff, diff)
    logits = -0.5 * np.exp(-2.0 * kp.value) * d2
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def predict_ztilde(w: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """z-tilde = W mu: row i predicted from every row but itself."""
    if w.shape[0] != w.shape[1]:
        raise DimensionError(f"weight matrix must be square, got {tuple(w.shape)}")
    if w.shape[1] != mu.shape[0]:
        raise DimensionError(
            f"weights {tuple(w.shape)} do not align with mu {tuple(mu.shape)}"
        )
    return matmul(w, mu)


def moment_penalty(mu: np.ndarray, ztilde: np.ndarray) -> float:
    """Mean over the batch of the squared distance between mu and its prediction."""
    if mu.shape != ztilde.shape:
        raise DimensionError(
            f"mu shape {tuple(mu.shape)} does not match ztilde {tuple(ztilde.shape)}"
        )
    r = mu - ztilde
    return float((r * r).sum() / mu.shape[0])


def penalty_forward(x: np.ndarray, kp: KernelParams, mu: np.ndarray) -> float:
    return moment_penalty(mu, predict_ztilde(kernel_weights(x, kp), mu))


def penalty_with_grads(x: np.ndarray, kp: KernelParams, mu: np.ndarray):
    """Penalty plus its exact gradients w.r.t. mu, x and log_lengthscale.

    Returns (penalty, dmu, dx, dlog_l) where dlog_l has shape (1,1).
    """
    n = x.shape[0]
    d2 = pairwise_sqdist(x)
    inv_l2 = np.exp(-2.0 * kp.value)
    w = row_softmax_masked(-0.5 * inv_l2 * d2)

    zt = matmul(w, mu)
    r = mu - zt
    penalty = float((r * r).sum() / n)

    dzt = (-2.0 / n) * r
    dmu = (2.0 / n) * r + matmul(w.T, dzt)

    # back through the row softmax: dS = W (G - rowsum(W G)); masked diagonal
    # entries of W are 0, so their dS vanishes automatically
    g = matmul(dzt, mu.T)
    wg = w * g
    ds = w * (g - wg.sum(axis=1, keepdims=True))

    # logits S = -d2 * inv_l2 / 2
    gd = ds * (-0.5 * inv_l2)
    dlog_l = np.array([[inv_l2 * float((ds * d2).sum())]])

    m = gd + gd.T
    dx = 2.0 * (m.sum(axis=1, keepdims=True) * x - matmul(m, x))
    return penalty, dmu, dx, dlog_l


def encode_x(x_mlp: Mlp, y: np.ndarray, dropout: DropoutPlan = INFERENCE) -> np.ndarray:
    """Deterministic map from observations to X locations (dropout only trains)."""
    x, _ = mlp_forward(x_mlp, y, dropout)
    return x


def npvae_loss(z_mlp: Mlp, x_mlp: Mlp, dec_mlp: Mlp, kp: KernelParams,
               y: np.ndarray, eps: np.ndarray,
               drop_z: DropoutPlan = INFERENCE,
               drop_dec: DropoutPlan = INFERENCE,
               drop_x: DropoutPlan = INFERENCE,
               penalty_weight: float = 1.0):
    """Coupled loss and gradients for one minibatch.

    The weight matrix is built from this batch's X locations only, so
    every prediction is leave-one-out within the minibatch. With
    penalty_weight == 0 the penalty is still evaluated for the log, but
    its backward pass is skipped entirely: the encoder and decoder
    gradients are then bit-identical to the plain ELBO's, and the
    X-side gradients are exactly zero.
    """
    if y.shape[0] < 2:
        raise ValidationError(
            f"coupled loss needs a batch of at least 2 rows, got {y.shape[0]}"
        )
    x, x_cache = mlp_forward(x_mlp, y, drop_x)
    state: dict[str, np.ndarray] = {}

    def mu_hook(mu: np.ndarray):
        if penalty_weight == 0.0:
            return penalty_forward(x, kp, mu), None
        penalty, dmu, dx, dlog_l = penalty_with_grads(x, kp, mu)
        state["dx"] = dx
        state["dlog_l"] = dlog_l
        return penalty, penalty_weight * dmu

    losses, grads = elbo_with_grads(z_mlp, dec_mlp, y, eps, drop_z, drop_dec, mu_hook)

    if penalty_weight == 0.0:
        x_grads = {k: np.zeros_like(v) for k, v in x_mlp.blocks("x_encoder").items()}
        grads.update(x_grads)
        grads["kernel.log_lengthscale"] = np.zeros((1, 1))
    else:
        x_grads, _ = mlp_backward(x_mlp, x_cache, penalty_weight * state["dx"])
        grads.update({f"x_encoder.{k}": v for k, v in x_grads.items()})
        grads["kernel.log_lengthscale"] = penalty_weight * state["dlog_l"]
    return losses, grads


def npvae_loss_forward(z_mlp: Mlp, x_mlp: Mlp, dec_mlp: Mlp, kp: KernelParams,
                       y: np.ndarray, eps: np.ndarray) -> LossBreakdown:
    """Forward-only coupled loss, dropout off; used by evaluation passes."""
    if y.shape[0] < 2:
        raise ValidationError(
            f"coupled loss needs a batch of at least 2 rows, got {y.shape[0]}"
        )
    x = encode_x(x_mlp, y)
    losses, _ = elbo_forward(z_mlp, dec_mlp, y, eps,
                             mu_hook=lambda mu: penalty_forward(x, kp, mu))
    return losses


@dataclass
class ReferenceSet:
    """Stored (x, E[z]) anchors that define the X to Z map after training."""

    x_ref: np.ndarray
    z_ref: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.x_ref.shape[0] != self.z_ref.shape[0]:
            raise DimensionError(
                f"x_ref rows {self.x_ref.shape[0]} != z_ref rows {self.z_ref.shape[0]}"
            )
        if self.labels.shape[0] != self.x_ref.shape[0]:
            raise DimensionError(
                f"labels length {self.labels.shape[0]} != x_ref rows "
                f"{self.x_ref.shape[0]}"
            )
        if self.x_ref.shape[0] < 1:
            raise ValidationError("reference set must have at least one row")

    @property
    def m(self) -> int:
        return self.x_ref.shape[0]


def build_reference_set(z_mlp: Mlp, x_mlp: Mlp, y: np.ndarray, labels: np.ndarray,
                        m: int, permutation: np.ndarray) -> ReferenceSet:
    """Anchor the first m rows of the permuted data, dropout off.

    The permutation is supplied by the caller (derived from the run
    seed) so the same seed always anchors the same datapoints.
    """
    n = y.shape[0]
    if n < 1:
        raise ValidationError("cannot build a reference set from empty data")
    if m > n:
        warnings.warn(
            f"reference size {m} exceeds dataset size {n}; clamping to {n}",
            stacklevel=2,
        )
        m = n
    idx = permutation[:m]
    y_sel = y[idx]
    x = encode_x(x_mlp, y_sel)
    mu, _ = encode(z_mlp, y_sel)
    return ReferenceSet(x, mu, np.asarray(labels)[idx].astype(np.int64))


def ancestral_sample(ref: ReferenceSet, dec_mlp: Mlp, kp: KernelParams,
                     x_query: np.ndarray) -> np.ndarray:
    """Decode the kernel-weighted average of the anchors nearest each query."""
    w = cross_kernel_weights(np.asarray(x_query, dtype=np.float64), ref.x_ref, kp)
    z = matmul(w, ref.z_ref)
    return decode(dec_mlp, z)


SPACE_X = "x"
SPACE_Z = "z"


def interpolate(z_mlp: Mlp, dec_mlp: Mlp, y_a: np.ndarray, y_b: np.ndarray,
                steps: int, space: str, x_mlp: Mlp | None = None,
                kp: KernelParams | None = None,
                ref: ReferenceSet | None = None) -> np.ndarray:
    """Decode a straight line between two observations' latent positions.

    space "z" walks between the posterior means and decodes directly;
    space "x" walks between the X locations and maps each point through
    the reference anchors. Endpoints are included, so steps=2 is just
    the two reconstructions.
    """
    if steps < 2:
        raise ValidationError(f"steps must be >= 2, got {steps}")
    if space not in (SPACE_X, SPACE_Z):
        raise ValidationError(f"space must be 'x' or 'z', got {space!r}")
    alphas = np.linspace(0.0, 1.0, steps).reshape(-1, 1)
    if space == SPACE_Z:
        mu_a, _ = encode(z_mlp, y_a)
        mu_b, _ = encode(z_mlp, y_b)
        path = (1.0 - alphas) * mu_a + alphas * mu_b
        return decode(dec_mlp, path)
    if x_mlp is None or kp is None or ref is None:
        raise ValidationError(
            "interpolation in x space needs an X encoder, kernel parameters "
            "and a reference set"
        )
    x_a = encode_x(x_mlp, y_a)
    x_b = encode_x(x_mlp, y_b)
    path = (1.0 - alphas) * x_a + alphas * x_b
    return ancestral_sample(ref, dec_mlp, kp, path)
