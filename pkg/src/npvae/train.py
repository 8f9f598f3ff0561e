"""The training loop, evaluation passes, and checkpoint round-trips.

Randomness discipline: the run seed is expanded into independent
sub-streams, one per role (shuffling, reparameterization noise, each
network's init, each network's dropout, evaluation), and the per-epoch
streams are reseeded from (role, epoch). Two consequences the tests
rely on:

- the plain model and the coupled model with penalty weight 0 consume
  identical draws for their shared networks, so their encoder/decoder
  trajectories are bit-identical;
- training resumed from an epoch-boundary checkpoint continues exactly
  like the unbroken run, since nothing carries RNG state across epochs.

Evaluation uses its own fixed streams (independent of the epoch), so a
metrics line can be recomputed bit-exactly from the checkpoint later.
"""

from __future__ import annotations

import numpy as np

from .artifacts import Checkpoint
from .config import (
    MODEL_NPVAE,
    MODEL_VAE,
    LossAccumulator,
    LossBreakdown,
    RunConfig,
)
from .coupling import (
    KernelParams,
    ReferenceSet,
    build_reference_set,
    npvae_loss,
    npvae_loss_forward,
)
from .data import BatchIter, DataSplit
from .errors import NonFiniteError, TrainingAborted, ValidationError
from .nn import Adam, DropoutPlan, Mlp, glorot_init
from .rng import Rng, derive_seed
from .vae import elbo_forward, elbo_with_grads

ROLE_SHUFFLE = 0
ROLE_EPSILON = 1
ROLE_INIT_Z = 2
ROLE_DROP_Z = 3
ROLE_INIT_DEC = 4
ROLE_DROP_DEC = 5
ROLE_INIT_X = 6
ROLE_DROP_X = 7
ROLE_EVAL_SHUFFLE = 8
ROLE_EVAL_EPSILON = 9
ROLE_DATA = 10
ROLE_REFERENCE = 11


def role_rng(seed: int, role: int) -> Rng:
    return Rng(derive_seed(seed, role))


def epoch_rng(seed: int, role: int, epoch: int) -> Rng:
    return Rng(derive_seed(derive_seed(seed, role), epoch))


class Trainer:
    """Owns the networks, kernel parameter, optimizer and epoch counter."""

    def __init__(self, config: RunConfig, z_mlp: Mlp, dec_mlp: Mlp,
                 x_mlp: Mlp | None = None, kp: KernelParams | None = None,
                 adam: Adam | None = None, epoch: int = 0,
                 losses: LossBreakdown | None = None,
                 reference: ReferenceSet | None = None):
        if config.model == MODEL_NPVAE and (x_mlp is None or kp is None):
            raise ValidationError("the coupled model needs an X encoder and kernel")
        if config.model == MODEL_VAE and (x_mlp is not None or kp is not None):
            raise ValidationError("the plain model carries no X encoder or kernel")
        self.config = config
        self.z_mlp = z_mlp
        self.dec_mlp = dec_mlp
        self.x_mlp = x_mlp
        self.kp = kp
        self.adam = adam if adam is not None else Adam(lr=config.lr)
        self.epoch = epoch
        self.losses = losses if losses is not None else LossBreakdown()
        self.reference = reference

    @classmethod
    def from_config(cls, config: RunConfig) -> "Trainer":
        """Fresh Glorot-initialized networks from the run seed."""
        enc_dims = [config.obs_dim, *config.hidden, 2 * config.z_dim]
        dec_dims = [config.z_dim, *reversed(config.hidden), config.obs_dim]
        z_mlp = glorot_init(role_rng(config.seed, ROLE_INIT_Z), enc_dims, "identity")
        dec_mlp = glorot_init(role_rng(config.seed, ROLE_INIT_DEC), dec_dims, "sigmoid")
        x_mlp = None
        kp = None
        if config.model == MODEL_NPVAE:
            x_dims = [config.obs_dim, *config.hidden, config.x_dim]
            x_mlp = glorot_init(role_rng(config.seed, ROLE_INIT_X), x_dims, "identity")
            kp = KernelParams.initial()
        return cls(config, z_mlp, dec_mlp, x_mlp, kp)

    def params(self) -> dict[str, np.ndarray]:
        blocks = self.z_mlp.blocks("z_encoder")
        blocks.update(self.dec_mlp.blocks("decoder"))
        if self.x_mlp is not None:
            blocks.update(self.x_mlp.blocks("x_encoder"))
            blocks["kernel.log_lengthscale"] = self.kp.log_lengthscale
        return blocks

    def _check_data(self, split: DataSplit):
        if split.y.shape[1] != self.config.obs_dim:
            raise ValidationError(
                f"data has {split.y.shape[1]} columns, model expects "
                f"{self.config.obs_dim}"
            )

    def _batch_losses(self, y: np.ndarray, eps: np.ndarray, drop_z: DropoutPlan,
                      drop_dec: DropoutPlan, drop_x: DropoutPlan):
        if self.config.model == MODEL_VAE:
            return elbo_with_grads(self.z_mlp, self.dec_mlp, y, eps, drop_z, drop_dec)
        return npvae_loss(
            self.z_mlp, self.x_mlp, self.dec_mlp, self.kp, y, eps,
            drop_z, drop_dec, drop_x, self.config.penalty_weight,
        )

    def train(self, split: DataSplit, n_epochs: int, on_epoch=None,
              on_batch=None) -> LossBreakdown:
        """Run n_epochs more epochs; returns the last evaluation breakdown.

        on_batch(epoch, batch_index, LossBreakdown) sees every training
        step; on_epoch(epoch_number_1_based, LossBreakdown) sees the
        end-of-epoch evaluation that also lands in the metrics log.
        """
        self._check_data(split)
        cfg = self.config
        params = self.params()
        keep = cfg.keep_prob
        for e in range(self.epoch, self.epoch + n_epochs):
            shuffle = epoch_rng(cfg.seed, ROLE_SHUFFLE, e)
            eps_rng = epoch_rng(cfg.seed, ROLE_EPSILON, e)
            drop_z = DropoutPlan(keep, epoch_rng(cfg.seed, ROLE_DROP_Z, e), True)
            drop_dec = DropoutPlan(keep, epoch_rng(cfg.seed, ROLE_DROP_DEC, e), True)
            drop_x = DropoutPlan(keep, epoch_rng(cfg.seed, ROLE_DROP_X, e), True)
            for b, idx in enumerate(BatchIter(split.n, cfg.batch_size, shuffle)):
                y = split.y[idx]
                eps = eps_rng.standard_normal(y.shape[0], cfg.z_dim)
                try:
                    losses, grads = self._batch_losses(y, eps, drop_z, drop_dec, drop_x)
                    total = losses.total(cfg.penalty_weight)
                    if not np.isfinite(total):
                        raise NonFiniteError(f"loss came out {total}")
                    self.adam.step(params, grads)
                except NonFiniteError as err:
                    raise TrainingAborted(f"epoch {e + 1}, batch {b}: {err}") from err
                if on_batch is not None:
                    on_batch(e, b, losses)
            self.epoch = e + 1
            self.losses = self.evaluate(split)
            if on_epoch is not None:
                on_epoch(self.epoch, self.losses)
        return self.losses

    def evaluate(self, split: DataSplit) -> LossBreakdown:
        """Mean losses over the split, dropout off, fixed evaluation streams."""
        self._check_data(split)
        cfg = self.config
        shuffle = role_rng(cfg.seed, ROLE_EVAL_SHUFFLE)
        eps_rng = role_rng(cfg.seed, ROLE_EVAL_EPSILON)
        acc = LossAccumulator()
        for idx in BatchIter(split.n, cfg.batch_size, shuffle):
            y = split.y[idx]
            eps = eps_rng.standard_normal(y.shape[0], cfg.z_dim)
            if cfg.model == MODEL_VAE:
                losses, _ = elbo_forward(self.z_mlp, self.dec_mlp, y, eps)
            else:
                losses = npvae_loss_forward(
                    self.z_mlp, self.x_mlp, self.dec_mlp, self.kp, y, eps
                )
            acc.add(y.shape[0], losses)
        return acc.mean()

    def build_reference(self, split: DataSplit) -> ReferenceSet:
        """Anchor reference_size points chosen by a seed-derived shuffle."""
        if self.config.model != MODEL_NPVAE:
            raise ValidationError("only the coupled model keeps a reference set")
        perm = role_rng(self.config.seed, ROLE_REFERENCE).permutation(split.n)
        self.reference = build_reference_set(
            self.z_mlp, self.x_mlp, split.y, split.labels,
            self.config.reference_size, perm,
        )
        return self.reference

    def to_checkpoint(self) -> Checkpoint:
        blocks = {k: v.copy() for k, v in self.params().items()}
        adam_m = {k: v.copy() for k, v in self.adam.m.items()}
        adam_v = {k: v.copy() for k, v in self.adam.v.items()}
        return Checkpoint(
            config=self.config,
            epoch=self.epoch,
            adam_t=self.adam.t,
            blocks=blocks,
            adam_m=adam_m,
            adam_v=adam_v,
            losses=self.losses,
            reference=self.reference,
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Trainer":
        cfg = ckpt.config
        z_mlp = _mlp_from_blocks(ckpt.blocks, "z_encoder", "identity")
        dec_mlp = _mlp_from_blocks(ckpt.blocks, "decoder", "sigmoid")
        _check_mlp_dims(z_mlp, [cfg.obs_dim, *cfg.hidden, 2 * cfg.z_dim], "z_encoder")
        _check_mlp_dims(
            dec_mlp, [cfg.z_dim, *reversed(cfg.hidden), cfg.obs_dim], "decoder"
        )
        x_mlp = None
        kp = None
        if cfg.model == MODEL_NPVAE:
            x_mlp = _mlp_from_blocks(ckpt.blocks, "x_encoder", "identity")
            _check_mlp_dims(
                x_mlp, [cfg.obs_dim, *cfg.hidden, cfg.x_dim], "x_encoder"
            )
            kp = KernelParams(ckpt.blocks["kernel.log_lengthscale"].copy())
        adam = Adam(lr=cfg.lr)
        adam.t = ckpt.adam_t
        adam.m = {k: v.copy() for k, v in ckpt.adam_m.items()}
        adam.v = {k: v.copy() for k, v in ckpt.adam_v.items()}
        trainer = cls(cfg, z_mlp, dec_mlp, x_mlp, kp, adam, ckpt.epoch,
                      ckpt.losses, ckpt.reference)
        # reattach optimizer state to the rebuilt parameter arrays
        params = trainer.params()
        for k in adam.m:
            if k not in params:
                raise ValidationError(f"optimizer state {k!r} has no parameter block")
        return trainer


def _check_mlp_dims(mlp: Mlp, dims: list[int], name: str):
    expected = list(zip(dims[:-1], dims[1:]))
    got = [w.shape for w in mlp.weights]
    if got != expected:
        raise ValidationError(
            f"checkpoint {name} layer shapes {got} do not match the "
            f"config's {expected}"
        )


def _mlp_from_blocks(blocks: dict[str, np.ndarray], prefix: str,
                     output_activation: str) -> Mlp:
    indices = sorted(
        int(k.split(".layer")[1].split(".")[0])
        for k in blocks
        if k.startswith(f"{prefix}.layer") and k.endswith(".W")
    )
    if not indices or indices != list(range(len(indices))):
        raise ValidationError(
            f"checkpoint layers for {prefix!r} are not contiguous: {indices}"
        )
    weights, biases = [], []
    for i in indices:
        try:
            weights.append(blocks[f"{prefix}.layer{i}.W"].copy())
            biases.append(blocks[f"{prefix}.layer{i}.b"].copy())
        except KeyError as err:
            raise ValidationError(f"checkpoint is missing block {err}") from err
    return Mlp(weights, biases, output_activation)
