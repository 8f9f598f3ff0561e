"""Persistence and figure output: checkpoints, PGM images, embedding CSV.

Checkpoint container, all little-endian after the magic:

    magic b"NPVAE\\x00"
    u32 version (currently 1)
    section*  until EOF

Each section is
    u16 name length, name bytes (utf-8)
    u8 dtype tag: 1 = float64 array, 2 = int64 array, 3 = utf-8 text
    u8 rank, then rank u32 dims
    payload (little-endian values; text payload length = dims[0])
    u32 CRC32 of the payload

Sections are written in sorted name order, so save, load and save again
produces byte-identical files. Unknown section names are rejected at
load: this version would otherwise silently drop them on the next save.
"""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import LossBreakdown, RunConfig
from .coupling import ReferenceSet
from .errors import (
    BadMagicError,
    ChecksumError,
    FormatError,
    TruncatedFileError,
    UnknownSectionError,
    ValidationError,
    VersionError,
)

MAGIC = b"NPVAE\x00"
VERSION = 1

TAG_F64 = 1
TAG_I64 = 2
TAG_TEXT = 3

_CONFIG_FIELDS = (
    "model", "z_dim", "x_dim", "hidden", "batch_size", "lr", "epochs", "seed",
    "keep_prob", "penalty_weight", "binarize", "limit", "reference_size",
    "obs_dim",
)

_SECTION_PATTERNS = [re.compile(p) for p in (
    r"^config\.(" + "|".join(_CONFIG_FIELDS) + r")$",
    r"^train\.(epoch|adam_t)$",
    r"^loss\.(neg_reconstruction|kl|penalty)$",
    r"^(z_encoder|decoder|x_encoder)\.layer\d+\.(W|b)$",
    r"^kernel\.log_lengthscale$",
    r"^adam\.((z_encoder|decoder|x_encoder)\.layer\d+\.(W|b)|kernel\.log_lengthscale)\.(m|v)$",
    r"^reference\.(x|z|labels)$",
)]


def _section_allowed(name: str) -> bool:
    return any(p.match(name) for p in _SECTION_PATTERNS)


@dataclass
class Checkpoint:
    """A full training state: config, parameters, optimizer, anchors."""

    config: RunConfig
    epoch: int
    adam_t: int
    blocks: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    losses: LossBreakdown
    reference: ReferenceSet | None = None

    def __post_init__(self):
        if self.config.model == "vae":
            banned = [k for k in self.blocks if k.startswith(("x_encoder.", "kernel."))]
            if banned or self.reference is not None:
                raise ValidationError(
                    "a vae checkpoint cannot carry X-encoder, kernel or "
                    f"reference state (found {banned or 'a reference set'})"
                )
        for k in self.adam_m:
            if k not in self.blocks:
                raise ValidationError(f"optimizer state {k!r} has no parameter block")


def _encode_section(name: str, tag: int, arr: np.ndarray | bytes) -> bytes:
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb
    if tag == TAG_TEXT:
        payload = bytes(arr)
        dims = (len(payload),)
    else:
        dtype = "<f8" if tag == TAG_F64 else "<i8"
        a = np.ascontiguousarray(arr, dtype=dtype)
        payload = a.tobytes()
        dims = a.shape
    head += struct.pack("<BB", tag, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims)
    return head + payload + struct.pack("<I", zlib.crc32(payload))


def _sections_of(ckpt: Checkpoint) -> dict[str, tuple[int, object]]:
    out: dict[str, tuple[int, object]] = {}
    for key, value in ckpt.config.to_flat().items():
        name = f"config.{key}"
        if isinstance(value, str):
            out[name] = (TAG_TEXT, value.encode("utf-8"))
        elif isinstance(value, float):
            out[name] = (TAG_F64, np.array(value))
        else:
            out[name] = (TAG_I64, np.array(int(value), dtype=np.int64))
    out["train.epoch"] = (TAG_I64, np.array(ckpt.epoch, dtype=np.int64))
    out["train.adam_t"] = (TAG_I64, np.array(ckpt.adam_t, dtype=np.int64))
    out["loss.neg_reconstruction"] = (TAG_F64, np.array(ckpt.losses.neg_reconstruction))
    out["loss.kl"] = (TAG_F64, np.array(ckpt.losses.kl))
    out["loss.penalty"] = (TAG_F64, np.array(ckpt.losses.penalty))
    for name, arr in ckpt.blocks.items():
        out[name] = (TAG_F64, arr)
    for name, arr in ckpt.adam_m.items():
        out[f"adam.{name}.m"] = (TAG_F64, arr)
    for name, arr in ckpt.adam_v.items():
        out[f"adam.{name}.v"] = (TAG_F64, arr)
    if ckpt.reference is not None:
        out["reference.x"] = (TAG_F64, ckpt.reference.x_ref)
        out["reference.z"] = (TAG_F64, ckpt.reference.z_ref)
        out["reference.labels"] = (TAG_I64, ckpt.reference.labels)
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    sections = _sections_of(ckpt)
    for name in sections:
        if not _section_allowed(name):
            raise ValidationError(f"internal error: section {name!r} not in schema")
    buf = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(sections):
        tag, value = sections[name]
        buf.append(_encode_section(name, tag, value))
    Path(path).write_bytes(b"".join(buf))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFileError(
                f"{self.path}: file ends at offset {len(self.raw)} while "
                f"reading {what} at offset {self.pos}"
            )
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out


def _parse_sections(path) -> dict[str, object]:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise BadMagicError(f"{path}: bad magic at offset 0, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != VERSION:
        raise VersionError(f"{path}: container version {version}, can read {VERSION}")
    sections: dict[str, object] = {}
    while r.pos < len(r.raw):
        (name_len,) = struct.unpack("<H", r.take(2, "section name length"))
        name = r.take(name_len, "section name").decode("utf-8")
        if not _section_allowed(name):
            raise UnknownSectionError(f"{path}: unknown section {name!r}")
        if name in sections:
            raise FormatError(f"{path}: duplicate section {name!r}")
        tag, rank = struct.unpack("<BB", r.take(2, f"{name} header"))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} dims"))
        count = 1
        for d in dims:
            count *= d
        if tag == TAG_TEXT:
            if rank != 1:
                raise FormatError(f"{path}: text section {name!r} must have rank 1")
            payload = r.take(count, f"{name} payload")
            value: object = payload.decode("utf-8")
        elif tag in (TAG_F64, TAG_I64):
            payload = r.take(8 * count, f"{name} payload")
            dtype = "<f8" if tag == TAG_F64 else "<i8"
            value = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
        else:
            raise FormatError(f"{path}: section {name!r} has unknown dtype tag {tag}")
        (crc,) = struct.unpack("<I", r.take(4, f"{name} checksum"))
        if crc != zlib.crc32(payload):
            raise ChecksumError(f"{path}: checksum mismatch in section {name!r}")
        sections[name] = value
    return sections


def load_checkpoint(path) -> Checkpoint:
    sections = _parse_sections(path)

    def pop(name: str, kind: type) -> object:
        if name not in sections:
            raise FormatError(f"{path}: missing required section {name!r}")
        v = sections.pop(name)
        if kind is float:
            return float(np.asarray(v).reshape(()))
        if kind is int:
            return int(np.asarray(v).reshape(()))
        return v

    flat = {}
    for key in _CONFIG_FIELDS:
        v = pop(f"config.{key}", object)
        flat[key] = v if isinstance(v, str) else np.asarray(v).reshape(()).item()
    config = RunConfig.from_flat(flat)
    epoch = pop("train.epoch", int)
    adam_t = pop("train.adam_t", int)
    losses = LossBreakdown(
        pop("loss.neg_reconstruction", float), pop("loss.kl", float),
        pop("loss.penalty", float),
    )
    reference = None
    if "reference.x" in sections:
        reference = ReferenceSet(
            np.asarray(pop("reference.x", object)),
            np.asarray(pop("reference.z", object)),
            np.asarray(pop("reference.labels", object)),
        )
    blocks: dict[str, np.ndarray] = {}
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for name in list(sections):
        v = np.asarray(sections.pop(name))
        if name.startswith("adam."):
            target = adam_m if name.endswith(".m") else adam_v
            target[name[len("adam."):-2]] = v
        else:
            blocks[name] = v
    return Checkpoint(config, epoch, adam_t, blocks, adam_m, adam_v, losses, reference)


TILE = 28
GAP = 2


def write_pgm(images: np.ndarray, layout: tuple[int, int], path) -> None:
    """Compose 28x28 tiles row-major with 2-pixel white gaps, binary PGM."""
    images = np.asarray(images, dtype=np.float64)
    rows, cols = layout
    if images.ndim != 2 or images.shape[1] != TILE * TILE:
        raise ValidationError(
            f"images must be (q, {TILE * TILE}), got {tuple(images.shape)}"
        )
    if images.shape[0] != rows * cols:
        raise ValidationError(
            f"{images.shape[0]} images do not fill a {rows}x{cols} layout"
        )
    if images.min() < 0.0 or images.max() > 1.0:
        raise ValidationError("image values must lie in [0, 1]")
    width = cols * TILE + (cols - 1) * GAP
    height = rows * TILE + (rows - 1) * GAP
    canvas = np.ones((height, width))
    for q in range(rows * cols):
        r, c = divmod(q, cols)
        top = r * (TILE + GAP)
        left = c * (TILE + GAP)
        canvas[top:top + TILE, left:left + TILE] = images[q].reshape(TILE, TILE)
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    payload = np.rint(canvas * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(header + payload)


def write_embedding_csv(x: np.ndarray, labels, path) -> None:
    """CSV of latent locations: header x0..x{d-1},label, 17-digit reals."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2:
        raise ValidationError(f"embedding must be 2-D, got {x.ndim}-D")
    if labels.shape != (x.shape[0],):
        raise ValidationError(
            f"labels length {labels.shape} does not match {x.shape[0]} rows"
        )
    d = x.shape[1]
    lines = [",".join([f"x{i}" for i in range(d)] + ["label"])]
    for row, label in zip(x, labels):
        lines.append(",".join([format(v, ".17g") for v in row] + [str(int(label))]))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")
