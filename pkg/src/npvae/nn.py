"""Multilayer perceptrons with hand-written reverse-mode gradients.

Hidden layers are affine -> tanh (-> inverted dropout while training);
the final layer is affine followed by an identity or sigmoid read-out.
The Adam optimizer and a central-finite-difference gradient checker live
here too, since they operate on the same named parameter blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NonFiniteError
from .ops import matmul, sigmoid
from .rng import Rng

IDENTITY = "identity"
SIGMOID = "sigmoid"


@dataclass
class Mlp:
    """Ordered affine layers: weights[i] is (fan_in x fan_out), biases[i] (1 x fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = IDENTITY

    def __post_init__(self):
        if self.output_activation not in (IDENTITY, SIGMOID):
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        for k in range(len(self.weights) - 1):
            if self.weights[k].shape[1] != self.weights[k + 1].shape[0]:
                raise DimensionError(
                    f"layer {k} output {self.weights[k].shape} does not chain into "
                    f"layer {k + 1} input {self.weights[k + 1].shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def blocks(self, prefix: str) -> dict[str, np.ndarray]:
        """Named views of the parameter arrays (shared, not copied)."""
        out: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.layer{i}.W"] = w
            out[f"{prefix}.layer{i}.b"] = b
        return out

    def copy(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )


@dataclass
class DropoutPlan:
    """Inverted dropout: kept units are scaled by 1/keep_prob at train time.

    With enabled=False (or keep_prob == 1) the forward pass draws nothing
    and applies no masks, so inference is exactly the raw network.
    """

    keep_prob: float = 1.0
    rng: Rng | None = None
    enabled: bool = False

    def __post_init__(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in (0, 1], got {self.keep_prob}")

    @property
    def active(self) -> bool:
        return self.enabled and self.keep_prob < 1.0 and self.rng is not None

    def draw_mask(self, rows: int, cols: int) -> np.ndarray:
        u = self.rng.uniform(rows, cols)
        return (u < self.keep_prob).astype(np.float64) / self.keep_prob


INFERENCE = DropoutPlan()


def glorot_init(rng: Rng, layer_dims: list[int], output_activation: str = IDENTITY) -> Mlp:
    """Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.

    Draw order is layer by layer, row-major within each weight matrix,
    so a seed pins the parameters byte-for-byte.
    """
    if len(layer_dims) < 2:
        raise ValueError("need at least input and output dims")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = (2.0 * rng.uniform(fan_in, fan_out) - 1.0) * bound
        weights.append(w)
        biases.append(np.zeros((1, fan_out)))
    return Mlp(weights, biases, output_activation)


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one forward pass."""

    inputs: list[np.ndarray]       # input to each layer (post-dropout of the previous)
    hidden_acts: list[np.ndarray]  # tanh outputs before dropout, per hidden layer
    masks: list[np.ndarray | None]
    output: np.ndarray             # final activation output


def mlp_forward(mlp: Mlp, x: np.ndarray, dropout: DropoutPlan = INFERENCE):
    """Run the network; returns (output, cache) with cache ready for backward."""
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise DimensionError(
            f"input shape {tuple(x.shape)} does not match first layer "
            f"{mlp.weights[0].shape}"
        )
    inputs, hidden_acts, masks = [], [], []
    h = x
    last = mlp.n_layers - 1
    for k in range(last):
        inputs.append(h)
        a = np.tanh(matmul(h, mlp.weights[k]) + mlp.biases[k])
        hidden_acts.append(a)
        if dropout.active:
            m = dropout.draw_mask(*a.shape)
            masks.append(m)
            h = a * m
        else:
            masks.append(None)
            h = a
    inputs.append(h)
    u = matmul(h, mlp.weights[last]) + mlp.biases[last]
    out = sigmoid(u) if mlp.output_activation == SIGMOID else u
    return out, ForwardCache(inputs, hidden_acts, masks, out)


def mlp_backward(mlp: Mlp, cache: ForwardCache, grad_output: np.ndarray):
    """Exact gradients of the forward map.

    grad_output is d(loss)/d(output) for the activation the forward pass
    returned. Returns ({block_name_suffix: grad}, grad_input) where the
    suffixes are "layer{i}.W" / "layer{i}.b".
    """
    if grad_output.shape != cache.output.shape:
        raise DimensionError(
            f"grad_output shape {tuple(grad_output.shape)} does not match "
            f"forward output {tuple(cache.output.shape)}"
        )
    if len(cache.inputs) != mlp.n_layers:
        raise ValueError("cache does not match this network")
    grads: dict[str, np.ndarray] = {}
    last = mlp.n_layers - 1
    if mlp.output_activation == SIGMOID:
        a = cache.output
        du = grad_output * a * (1.0 - a)
    else:
        du = grad_output
    for k in range(last, -1, -1):
        grads[f"layer{k}.W"] = matmul(cache.inputs[k].T, du)
        grads[f"layer{k}.b"] = du.sum(axis=0, keepdims=True)
        dh = matmul(du, mlp.weights[k].T)
        if k > 0:
            if cache.masks[k - 1] is not None:
                dh = dh * cache.masks[k - 1]
            a = cache.hidden_acts[k - 1]
            du = dh * (1.0 - a * a)
    return grads, dh


class Adam:
    """Adam with bias correction; descends losses (maximize by negating)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        """One in-place update of every block present in params."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in block {name!r}")
            if g.shape != p.shape:
                raise DimensionError(
                    f"gradient shape {tuple(g.shape)} does not match parameter "
                    f"{name!r} shape {tuple(p.shape)}"
                )
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class GradCheckEntry:
    block: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def lines(self) -> list[str]:
        width = max((len(e.block) for e in self.entries), default=0)
        return [
            f"{'PASS' if e.passed else 'FAIL'}  {e.block:<{width}}  "
            f"max_rel_err={e.max_rel_err:.3e}"
            for e in self.entries
        ]


def grad_check(loss_and_grads, blocks: dict[str, np.ndarray],
               tolerance: float, h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    loss_and_grads() must evaluate the loss at the current contents of
    `blocks` and return (loss, {block: grad}); it has to be deterministic
    (dropout off, noise frozen). Each entry's error is
    |analytic - fd| / max(1, |analytic|, |fd|), so tiny gradients are
    judged absolutely and large ones relatively.
    """
    _, analytic = loss_and_grads()
    report = GradCheckReport(tolerance=tolerance)
    for name, p in blocks.items():
        grad = analytic[name]
        worst = 0.0
        flat = p.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lo_plus, _ = loss_and_grads()
            flat[i] = orig - h
            lo_minus, _ = loss_and_grads()
            flat[i] = orig
            fd = (lo_plus - lo_minus) / (2.0 * h)
            a = gflat[i]
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            if err > worst:
                worst = err
        report.entries.append(GradCheckEntry(name, worst, worst < tolerance))
    return report
