"""Command line front end.

Subcommands: train, sample, interpolate, embed, eval, gradcheck.
Exit codes: 0 success, 1 validation or check failure, 2 I/O or format
error. The data directory comes from --data-dir or NPVAE_DATA_DIR.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .artifacts import (
    load_checkpoint,
    save_checkpoint,
    write_embedding_csv,
    write_pgm,
)
from .config import MODEL_NPVAE, MODEL_VAE, RunConfig
from .coupling import ancestral_sample, encode_x, interpolate, npvae_loss
from .data import DataSplit, load_mnist
from .errors import FormatError, TrainingAborted, ValidationError
from .nn import grad_check
from .rng import Rng, derive_seed
from .train import ROLE_DATA, Trainer
from .vae import decode, encode, elbo_with_grads

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2

ENV_DATA_DIR = "NPVAE_DATA_DIR"

METRICS_HEADER = "epoch,neg_recon,kl,penalty,total"


def _fmt(v: float) -> str:
    return format(v, ".17g")


def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as err:
        raise ValidationError(f"bad --hidden value {text!r}: {err}") from err
    if not dims:
        raise ValidationError(f"bad --hidden value {text!r}: no sizes")
    return dims


def _parse_point(text: str, dim: int, what: str) -> np.ndarray:
    try:
        vals = [float(p) for p in text.split(",")]
    except ValueError as err:
        raise ValidationError(f"bad {what} value {text!r}: {err}") from err
    if len(vals) != dim:
        raise ValidationError(
            f"{what} has {len(vals)} coordinates, the model needs {dim}"
        )
    return np.array(vals).reshape(1, dim)


def _data_dir(args) -> Path:
    d = args.data_dir or os.environ.get(ENV_DATA_DIR)
    if not d:
        raise ValidationError(
            f"no data directory: pass --data-dir or set {ENV_DATA_DIR}"
        )
    return Path(d)


def _load_trainer(args) -> Trainer:
    return Trainer.from_checkpoint(load_checkpoint(args.ckpt))


def _prepared_split(trainer: Trainer, args, name: str,
                    apply_limit: bool) -> DataSplit:
    train_split, val_split, test_split = load_mnist(_data_dir(args))
    split = {"train": train_split, "val": val_split, "test": test_split}[name]
    if name == "train" and apply_limit:
        split = split.head(trainer.config.limit)
    if trainer.config.binarize:
        split = split.binarized()
    return split


def cmd_train(args) -> int:
    if args.model == MODEL_VAE:
        for flag, value in (("--x-dim", args.x_dim), ("--lambda", args.penalty_weight)):
            if value is not None:
                print(f"warning: {flag} is ignored for model vae", file=sys.stderr)
    config = RunConfig(
        model=args.model,
        obs_dim=784,
        z_dim=args.z_dim,
        x_dim=args.x_dim if args.x_dim is not None else 2,
        hidden=_parse_hidden(args.hidden),
        batch_size=args.batch_size,
        lr=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        keep_prob=args.keep_prob,
        penalty_weight=(
            args.penalty_weight if args.penalty_weight is not None else 1.0
        ),
        binarize=args.binarize,
        limit=args.limit,
        reference_size=args.reference_size,
    )
    train_split, _, _ = load_mnist(_data_dir(args))
    train_split = train_split.head(config.limit)
    if config.binarize:
        train_split = train_split.binarized()
    trainer = Trainer.from_config(config)
    metrics_path = Path(str(args.out) + ".metrics.csv")
    with open(metrics_path, "w", newline="\n") as log:
        log.write(METRICS_HEADER + "\n")

        def on_epoch(epoch, losses):
            total = losses.total(config.penalty_weight)
            log.write(
                f"{epoch},{_fmt(losses.neg_reconstruction)},{_fmt(losses.kl)},"
                f"{_fmt(losses.penalty)},{_fmt(total)}\n"
            )
            log.flush()

        trainer.train(train_split, config.epochs, on_epoch=on_epoch)
    if config.model == MODEL_NPVAE:
        trainer.build_reference(train_split)
    save_checkpoint(trainer.to_checkpoint(), args.out)
    print(f"wrote {args.out} and {metrics_path} after {trainer.epoch} epochs")
    return EXIT_OK


def _grid_queries(n: int, radius: float) -> np.ndarray:
    """Row-major lattice read like a plot: top row has the highest second
    coordinate, left column the lowest first coordinate."""
    lin = np.linspace(-radius, radius, n)
    pts = [(lin[c], lin[n - 1 - r]) for r in range(n) for c in range(n)]
    return np.array(pts)


def cmd_sample(args) -> int:
    trainer = _load_trainer(args)
    cfg = trainer.config
    coupled = cfg.model == MODEL_NPVAE
    query_dim = cfg.x_dim if coupled else cfg.z_dim
    if (args.x is None) == (args.grid is None):
        raise ValidationError("pass exactly one of --x or --grid")
    if args.x is not None:
        queries = _parse_point(args.x, query_dim, "--x")
        layout = (1, 1)
    else:
        if args.grid < 1:
            raise ValidationError(f"--grid must be >= 1, got {args.grid}")
        if query_dim != 2:
            space = "X" if coupled else "Z"
            raise ValidationError(
                f"--grid needs a 2-D {space} space, this model has {query_dim}"
            )
        queries = _grid_queries(args.grid, args.range)
        layout = (args.grid, args.grid)
    if coupled:
        if trainer.reference is None:
            raise ValidationError("checkpoint has no reference set to sample from")
        images = ancestral_sample(trainer.reference, trainer.dec_mlp, trainer.kp,
                                  queries)
    else:
        images = decode(trainer.dec_mlp, queries)
    write_pgm(images, layout, args.out)
    print(f"wrote {args.out} ({layout[0]}x{layout[1]} tiles)")
    return EXIT_OK


def cmd_interpolate(args) -> int:
    trainer = _load_trainer(args)
    if args.space == "x" and trainer.config.model != MODEL_NPVAE:
        raise ValidationError("interpolation in X needs a coupled-model checkpoint")
    split = _prepared_split(trainer, args, "train", apply_limit=False)
    for name, idx in (("--a", args.a), ("--b", args.b)):
        if not 0 <= idx < split.n:
            raise ValidationError(
                f"{name} index {idx} outside the train split (0..{split.n - 1})"
            )
    strip = interpolate(
        trainer.z_mlp, trainer.dec_mlp,
        split.y[args.a:args.a + 1], split.y[args.b:args.b + 1],
        args.steps, args.space,
        x_mlp=trainer.x_mlp, kp=trainer.kp, ref=trainer.reference,
    )
    write_pgm(strip, (1, args.steps), args.out)
    print(f"wrote {args.out} (1x{args.steps} strip in {args.space} space)")
    return EXIT_OK


def cmd_embed(args) -> int:
    trainer = _load_trainer(args)
    split = _prepared_split(trainer, args, args.split, apply_limit=False)
    if trainer.config.model == MODEL_NPVAE:
        emb = encode_x(trainer.x_mlp, split.y)
    elif trainer.config.z_dim == 2:
        emb, _ = encode(trainer.z_mlp, split.y)
    else:
        raise ValidationError(
            "embedding a plain VAE checkpoint needs z_dim == 2, got "
            f"{trainer.config.z_dim}"
        )
    write_embedding_csv(emb, split.labels, args.out)
    print(f"wrote {args.out} ({split.n} rows)")
    return EXIT_OK


def cmd_eval(args) -> int:
    trainer = _load_trainer(args)
    split = _prepared_split(trainer, args, args.split, apply_limit=True)
    losses = trainer.evaluate(split)
    out = [
        f"neg_reconstruction={_fmt(losses.neg_reconstruction)}",
        f"kl={_fmt(losses.kl)}",
    ]
    if trainer.config.model == MODEL_NPVAE:
        out.append(f"penalty={_fmt(losses.penalty)}")
    out.append(f"total={_fmt(losses.total(trainer.config.penalty_weight))}")
    print("\n".join(out))
    return EXIT_OK


TOY_OBS = 12
TOY_HIDDEN = (8, 8)
TOY_BATCH = 4
TOY_SEED = 5


def run_gradcheck(tolerance: float = 1e-4, h: float = 1e-5,
                  flip_block: str | None = None):
    """Finite-difference check of both full losses on toy dimensions.

    flip_block, when set, negates that block's analytic gradient before
    the comparison; it exists so tests can prove a broken gradient is
    actually caught and named.
    """
    data_rng = Rng(derive_seed(TOY_SEED, ROLE_DATA))
    y = data_rng.uniform(TOY_BATCH, TOY_OBS)
    eps = data_rng.standard_normal(TOY_BATCH, 2)

    def corrupted(fn):
        def inner():
            loss, grads = fn()
            if flip_block is not None and flip_block in grads:
                grads = dict(grads)
                grads[flip_block] = -grads[flip_block]
            return loss, grads
        return inner

    lines = []
    all_ok = True
    for model in (MODEL_VAE, MODEL_NPVAE):
        config = RunConfig(
            model=model, obs_dim=TOY_OBS, z_dim=2, x_dim=2, hidden=TOY_HIDDEN,
            batch_size=TOY_BATCH, epochs=0, seed=TOY_SEED,
        )
        trainer = Trainer.from_config(config)
        if model == MODEL_VAE:
            def loss_and_grads(t=trainer):
                losses, grads = elbo_with_grads(t.z_mlp, t.dec_mlp, y, eps)
                return losses.total(0.0), grads
        else:
            def loss_and_grads(t=trainer):
                losses, grads = npvae_loss(
                    t.z_mlp, t.x_mlp, t.dec_mlp, t.kp, y, eps,
                    penalty_weight=1.0,
                )
                return losses.total(1.0), grads
        report = grad_check(corrupted(loss_and_grads), trainer.params(),
                            tolerance, h)
        lines.extend(f"{model:<6} {line}" for line in report.lines())
        all_ok = all_ok and report.passed
    return lines, all_ok


def cmd_gradcheck(args) -> int:
    lines, ok = run_gradcheck(tolerance=args.tolerance,
                              flip_block=args.flip_block)
    print("\n".join(lines))
    print("gradcheck " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_INVALID


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="npvae", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--model", choices=(MODEL_VAE, MODEL_NPVAE),
                   default=MODEL_NPVAE)
    t.add_argument("--z-dim", type=int, default=2)
    t.add_argument("--x-dim", type=int, default=None)
    t.add_argument("--hidden", default="500,500",
                   help="comma-separated hidden layer sizes")
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--epochs", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--keep-prob", type=float, default=0.9)
    t.add_argument("--lambda", dest="penalty_weight", type=float, default=None,
                   help="penalty weight (0 reduces to the plain VAE)")
    t.add_argument("--binarize", action="store_true",
                   help="threshold pixels at 0.5")
    t.add_argument("--limit", type=int, default=0,
                   help="train on only the first N images of the split")
    t.add_argument("--reference-size", type=int, default=1024)
    t.add_argument("--data-dir", default=None)
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="decode latent points into a PGM")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--x", default=None,
                   help='one latent point, e.g. "0.5,-1.0"')
    s.add_argument("--grid", type=int, default=None,
                   help="N for an NxN lattice over [-R, R]^2")
    s.add_argument("--range", type=float, default=2.0,
                   help="lattice half-width R")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    i = sub.add_parser("interpolate",
                       help="decode a line between two training images")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--a", type=int, required=True,
                   help="index of the first endpoint in the train split")
    i.add_argument("--b", type=int, required=True,
                   help="index of the second endpoint in the train split")
    i.add_argument("--steps", type=int, default=11)
    i.add_argument("--space", choices=("x", "z"), default="x")
    i.add_argument("--data-dir", default=None)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_interpolate)

    e = sub.add_parser("embed", help="export latent locations as CSV")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", choices=("train", "val", "test"),
                   default="train")
    e.add_argument("--data-dir", default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    v = sub.add_parser("eval", help="print mean losses over a split")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--split", choices=("train", "val", "test"),
                   default="test")
    v.add_argument("--data-dir", default=None)
    v.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck",
                       help="compare analytic gradients to finite differences")
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--flip-block", default=None, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as err:
        return int(err.code or 0)
    except (ValidationError, TrainingAborted) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (FormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
