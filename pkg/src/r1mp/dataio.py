"""Rating-triplet and PGM ingestion, masking, splitting, model files."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ContractError, FactorModel, ObservedMatrix

__all__ = [
    "DataError",
    "TripletFile",
    "GrayImage",
    "load_triplets",
    "split_train_test",
    "sample_mask",
    "load_pgm",
    "save_pgm",
    "to_gray_image",
    "save_model",
    "load_model",
]


class DataError(ContractError):
    """Input data could not be parsed or violates the data contract."""


@dataclass(frozen=True)
class TripletFile:
    """Location and layout of a ``row col value`` text file.

    ``delimiter=None`` splits on any whitespace.  Columns after the third
    (e.g. MovieLens timestamps) are ignored.  ``shape`` is inferred from the
    largest indices when omitted.
    """

    path: str | Path
    delimiter: Optional[str] = None
    index_base: int = 1
    shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.index_base not in (0, 1):
            raise DataError("index_base must be 0 or 1")


def load_triplets(file: TripletFile) -> ObservedMatrix:
    rows, cols, vals = [], [], []
    base = file.index_base
    with open(file.path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split(file.delimiter)
            if len(parts) < 3:
                raise DataError(f"{file.path}:{lineno}: expected 'row col value', got {line.strip()!r}")
            try:
                r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise DataError(f"{file.path}:{lineno}: malformed line {line.strip()!r}") from None
            if r < base or c < base:
                raise DataError(f"{file.path}:{lineno}: index below base {base}")
            rows.append(r - base)
            cols.append(c - base)
            vals.append(v)
    if not rows:
        raise DataError(f"{file.path}: no observations")
    rows = np.array(rows, dtype=np.int64)
    cols = np.array(cols, dtype=np.int64)
    shape = file.shape
    if shape is not None and (rows.max() >= shape[0] or cols.max() >= shape[1]):
        raise DataError(f"{file.path}: indices exceed declared shape {shape}")
    try:
        return ObservedMatrix.from_triplets(rows, cols, vals, shape=shape)
    except ContractError as exc:
        raise DataError(f"{file.path}: {exc}") from None


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_train_test(obs: ObservedMatrix, fraction: float, seed: int):
    """Seeded uniform split; ``round(fraction * |Omega|)`` entries go to train."""
    if not (0.0 < fraction < 1.0):
        raise ContractError("fraction must lie strictly between 0 and 1")
    n_train = _round_half_up(fraction * obs.nnz)
    if n_train == 0 or n_train == obs.nnz:
        raise ContractError(f"split of {obs.nnz} entries at {fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(obs.nnz)
    return obs.subset(perm[:n_train]), obs.subset(perm[n_train:])


@dataclass(frozen=True)
class GrayImage:
    """8-bit style grayscale raster, ``pixels`` shaped (height, width)."""

    pixels: np.ndarray
    max_value: int = 255

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise DataError("pixels must be a non-empty 2-D array")
        if not np.issubdtype(px.dtype, np.integer):
            raise DataError("pixels must be integers")
        if px.min() < 0 or px.max() > self.max_value:
            raise DataError(f"pixel values must lie in [0, {self.max_value}]")
        px = px.astype(np.uint16 if self.max_value > 255 else np.uint8)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def sample_mask(image: GrayImage, keep_fraction: float, seed: int) -> ObservedMatrix:
    """Observe ``round(keep_fraction * width * height)`` pixels chosen uniformly."""
    if not (0.0 < keep_fraction <= 1.0):
        raise ContractError("keep_fraction must lie in (0, 1]")
    total = image.width * image.height
    n_keep = _round_half_up(keep_fraction * total)
    if n_keep == 0:
        raise ContractError("mask keeps no pixel")
    flat = np.random.default_rng(seed).choice(total, size=n_keep, replace=False)
    r, c = np.divmod(flat, image.width)
    return ObservedMatrix.from_triplets(r, c, image.pixels[r, c].astype(np.float64), shape=image.pixels.shape)


def _pgm_tokens(data: bytes, count: int, pos: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] != b"\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def load_pgm(path) -> GrayImage:
    """Read a P2 (ASCII) or P5 (binary) PGM file."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise DataError(f"{path}: unsupported magic number {magic!r}")
    try:
        (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if w < 1 or h < 1 or not (0 < maxval < 65536):
        raise DataError(f"{path}: bad PGM dimensions or max value")
    total = w * h
    if magic == b"P5":
        pos += 1  # single whitespace byte before the raster
        width = 1 if maxval < 256 else 2
        raw = data[pos:pos + total * width]
        if len(raw) < total * width:
            raise DataError(f"{path}: truncated payload")
        px = np.frombuffer(raw, dtype=np.uint8 if width == 1 else ">u2").astype(np.int64)
    else:
        try:
            px = np.array(data[pos:].split(), dtype=np.int64)
        except ValueError:
            raise DataError(f"{path}: non-numeric pixel data") from None
        if len(px) < total:
            raise DataError(f"{path}: truncated payload")
        px = px[:total]
    return GrayImage(px.reshape(h, w), max_value=maxval)


def save_pgm(image: GrayImage, path, binary: bool = True):
    """Write canonical PGM: ``P5\\n<w> <h>\\n<max>\\n`` then the raster."""
    header = f"{'P5' if binary else 'P2'}\n{image.width} {image.height}\n{image.max_value}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            dtype = np.uint8 if image.max_value < 256 else ">u2"
            fh.write(image.pixels.astype(dtype).tobytes())
        else:
            for row in image.pixels:
                fh.write((" ".join(str(int(p)) for p in row) + "\n").encode("ascii"))


def to_gray_image(values, max_value: int = 255) -> GrayImage:
    """Clamp a real-valued reconstruction to ``[0, max_value]`` and round half away from zero."""
    x = np.clip(np.asarray(values, dtype=np.float64), 0.0, max_value)
    return GrayImage(np.floor(x + 0.5).astype(np.int64), max_value=max_value)


_MODEL_MAGIC = "r1mp-model 1"


def save_model(model: FactorModel, path):
    """Plain-text model: header, then one block per factor (theta, u, v)."""
    fmt = lambda xs: " ".join(repr(float(x)) for x in xs)
    with open(path, "w") as fh:
        fh.write(f"{_MODEL_MAGIC}\nshape {model.n_rows} {model.n_cols}\nrank {model.rank}\n")
        fh.write(f"offset {float(model.offset)!r}\n")
        for i in range(model.rank):
            fh.write(f"\ntheta {float(model.weights[i])!r}\n")
            fh.write(f"u {fmt(model.U[:, i])}\n")
            fh.write(f"v {fmt(model.V[:, i])}\n")


def load_model(path) -> FactorModel:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != _MODEL_MAGIC:
        raise DataError(f"{path}: not a model file")
    try:
        n, m = (int(x) for x in lines[1].split()[1:])
        k = int(lines[2].split()[1])
        offset = float(lines[3].split()[1])
        thetas, us, vs = [], [], []
        body = lines[4:]
        for i in range(k):
            t, u, v = body[3 * i : 3 * i + 3]
            thetas.append(float(t.split()[1]))
            us.append([float(x) for x in u.split()[1:]])
            vs.append([float(x) for x in v.split()[1:]])
    except (ValueError, IndexError):
        raise DataError(f"{path}: malformed model file") from None
    if k == 0:
        return FactorModel(n, m, offset=offset)
    return FactorModel(n, m, np.array(us).T, np.array(vs).T, thetas, offset)
