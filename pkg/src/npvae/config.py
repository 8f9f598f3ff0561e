"""Run configuration and the loss bookkeeping record."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ValidationError

MODEL_VAE = "vae"
MODEL_NPVAE = "npvae"


@dataclass
class RunConfig:
    """Everything that determines a training run, data aside.

    With the same config and the same dataset bytes, training is
    bit-reproducible: every random draw comes from streams derived from
    `seed`.
    """

    model: str = MODEL_NPVAE
    obs_dim: int = 784
    z_dim: int = 2
    x_dim: int = 2
    hidden: tuple[int, ...] = (500, 500)
    batch_size: int = 128
    lr: float = 1e-3
    epochs: int = 1
    seed: int = 0
    keep_prob: float = 0.9
    penalty_weight: float = 1.0
    binarize: bool = False
    limit: int = 0
    reference_size: int = 1024

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.model not in (MODEL_VAE, MODEL_NPVAE):
            raise ValidationError(f"unknown model {self.model!r}")
        if self.obs_dim < 1:
            raise ValidationError(f"obs_dim must be >= 1, got {self.obs_dim}")
        if self.z_dim < 1:
            raise ValidationError(f"z_dim must be >= 1, got {self.z_dim}")
        if self.x_dim < 1:
            raise ValidationError(f"x_dim must be >= 1, got {self.x_dim}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValidationError(f"hidden sizes must be positive, got {self.hidden}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.model == MODEL_NPVAE and self.batch_size < 2:
            raise ValidationError(
                "npvae needs batch_size >= 2: the kernel weights of a "
                "single point are undefined"
            )
        if not self.lr > 0.0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValidationError(f"keep_prob must be in (0, 1], got {self.keep_prob}")
        if self.penalty_weight < 0.0:
            raise ValidationError(
                f"penalty_weight must be >= 0, got {self.penalty_weight}"
            )
        if self.limit < 0:
            raise ValidationError(f"limit must be >= 0, got {self.limit}")
        if self.reference_size < 1:
            raise ValidationError(
                f"reference_size must be >= 1, got {self.reference_size}"
            )

    def to_flat(self) -> dict[str, object]:
        """Scalar-per-key form used by the checkpoint writer."""
        out: dict[str, object] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "hidden":
                v = ",".join(str(h) for h in v)
            elif isinstance(v, bool):
                v = int(v)
            out[f.name] = v
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, object]) -> "RunConfig":
        kwargs: dict[str, object] = {}
        for f in fields(cls):
            if f.name not in flat:
                raise ValidationError(f"config is missing field {f.name!r}")
            v = flat[f.name]
            if f.name == "hidden":
                kwargs[f.name] = tuple(int(p) for p in str(v).split(","))
            elif f.name == "model":
                kwargs[f.name] = str(v)
            elif f.name == "binarize":
                kwargs[f.name] = bool(int(v))
            elif f.name in ("lr", "keep_prob", "penalty_weight"):
                kwargs[f.name] = float(v)
            else:
                kwargs[f.name] = int(v)
        return cls(**kwargs)


@dataclass
class LossBreakdown:
    """Per-datapoint means of the loss terms over some set of batches."""

    neg_reconstruction: float = 0.0
    kl: float = 0.0
    penalty: float = 0.0

    @property
    def elbo(self) -> float:
        return -(self.neg_reconstruction + self.kl)

    def total(self, penalty_weight: float) -> float:
        return self.neg_reconstruction + self.kl + penalty_weight * self.penalty


@dataclass
class LossAccumulator:
    """Datapoint-weighted running means, accumulated in batch order."""

    n: int = 0
    sums: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def add(self, batch_rows: int, losses: LossBreakdown):
        self.n += batch_rows
        self.sums[0] += batch_rows * losses.neg_reconstruction
        self.sums[1] += batch_rows * losses.kl
        self.sums[2] += batch_rows * losses.penalty

    def mean(self) -> LossBreakdown:
        if self.n == 0:
            return LossBreakdown()
        return LossBreakdown(
            self.sums[0] / self.n, self.sums[1] / self.n, self.sums[2] / self.n
        )
