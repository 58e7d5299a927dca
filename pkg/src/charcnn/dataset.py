"""Image/label ingestion: IDX and PGM files, preprocessing, splitting, label maps."""

from __future__ import annotations

import math
import struct
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class BadMagicError(ParseError):
    pass


class TruncatedError(ParseError):
    pass


class DimOverflowError(ParseError):
    pass


# ------------------------------------------------------------------------ IDX


def _parse_idx(data: bytes, magic: int, ndim: int, source: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(data) < 4:
        raise TruncatedError(f"{source}: expected at least 4 header bytes, got {len(data)}")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise BadMagicError(f"{source}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(data) < header:
        raise TruncatedError(f"{source}: expected {header} header bytes, got {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = math.prod(dims)
    if count > sys.maxsize:
        raise DimOverflowError(f"{source}: dimensions {dims} overflow the element count")
    actual = len(data) - header
    if actual < count:
        raise TruncatedError(
            f"{source}: payload truncated, expected {count} bytes, got {actual}"
        )
    if actual > count:
        raise ParseError(f"{source}: {actual - count} trailing bytes after payload")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path: str | Path) -> np.ndarray:
    """(N, H, W) uint8 array from an IDX image file."""
    path = Path(path)
    return _parse_idx(path.read_bytes(), IMAGE_MAGIC, 3, str(path))


def read_idx_labels(path: str | Path) -> np.ndarray:
    path = Path(path)
    return _parse_idx(path.read_bytes(), LABEL_MAGIC, 1, str(path))


def idx_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise InputError(f"IDX payload must be uint8, got {array.dtype}")
    magic = {1: LABEL_MAGIC, 3: IMAGE_MAGIC}.get(array.ndim)
    if magic is None:
        raise InputError(f"only rank-1 labels and rank-3 images are supported, got rank {array.ndim}")
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def write_idx(array: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(idx_bytes(array))


# ------------------------------------------------------------------------ PGM


def _pgm_tokens(data: bytes, count: int, source: str) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{source}: PGM header ended early")
        tokens.append(data[start:pos])
    return tokens, pos


def parse_pgm(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """(H, W) uint8 array from a binary (P5) PGM with maxval 255."""
    if data[:2] in (b"P2",):
        raise ParseError(f"{source}: ASCII PGM (P2) is not supported, use binary P5")
    if data[:2] != b"P5":
        raise ParseError(f"{source}: not a P5 PGM file (magic {data[:2]!r})")
    tokens, pos = _pgm_tokens(data, 4, source)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"{source}: malformed PGM header {tokens!r}") from exc
    if width < 1 or height < 1:
        raise ParseError(f"{source}: bad PGM size {width}x{height}")
    if maxval != 255:
        raise ParseError(f"{source}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte before the raster
    raster = data[pos:]
    if len(raster) < width * height:
        raise TruncatedError(
            f"{source}: PGM raster truncated, expected {width * height} bytes, got {len(raster)}"
        )
    return np.frombuffer(raster[: width * height], dtype=np.uint8).reshape(height, width)


def read_pgm(path: str | Path) -> np.ndarray:
    path = Path(path)
    return parse_pgm(path.read_bytes(), str(path))


def write_pgm(image: np.ndarray, path: str | Path) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + image.tobytes())


# -------------------------------------------------------------- preprocessing


def _area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix averaging each output cell over its source interval."""
    weights = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(math.floor(lo), min(src, math.ceil(hi))):
            weights[i, j] = min(hi, j + 1) - max(lo, j)
    return weights / scale


def preprocess(raw: np.ndarray, size: int = 32, invert: bool = False) -> np.ndarray:
    """Area-average (N, H, W) bytes down to (N, 1, size, size) floats in [0, 1].

    Integer downscale factors use exact block means; other sizes use
    fractional-overlap area weights.
    """
    raw = np.asarray(raw)
    if raw.ndim == 2:
        raw = raw[None]
    if raw.ndim != 3:
        raise InputError(f"expected (N, H, W) images, got shape {raw.shape}")
    n, h, w = raw.shape
    if h < size or w < size:
        raise InputError(f"unsupported size: cannot upscale {h}x{w} to {size}x{size}")
    data = raw.astype(np.float64)
    if h % size == 0 and w % size == 0:
        fh, fw = h // size, w // size
        out = data.reshape(n, size, fh, size, fw).sum(axis=(2, 4)) / (fh * fw)
    else:
        out = np.einsum("ih,nhw,jw->nij", _area_weights(h, size), data, _area_weights(w, size))
    out = np.clip(out / 255.0, 0.0, 1.0)
    if invert:
        out = 1.0 - out
    return out.astype(np.float32)[:, None]


def quantize(images: np.ndarray) -> np.ndarray:
    """(N, 1, H, W) floats in [0, 1] back to (N, H, W) bytes."""
    return np.rint(np.clip(images[:, 0], 0, 1) * 255).astype(np.uint8)


# --------------------------------------------------------------------- splits


@dataclass
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    seed: int


def split(n: int, ratio: float = 0.7, seed: int = 0) -> SplitIndices:
    """Seeded shuffle, then cut: test gets floor((1 - ratio) * n), train the rest."""
    if n < 2:
        raise InputError(f"need at least 2 samples to split, got {n}")
    n_test = math.floor((1 - Fraction(str(ratio))) * n)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndices(perm[: n - n_test], perm[n - n_test :], seed)


# ----------------------------------------------------------------- label maps


def label_map_balanced47() -> list[str]:
    digits = [str(d) for d in range(10)]
    upper = [chr(c) for c in range(ord("A"), ord("Z") + 1)]
    lower = list("abdefghnqrt")
    return digits + upper + lower


def default_label_map(classes: int) -> list[str]:
    """The first ``classes`` entries of the 47-class map (digits for 10)."""
    full = label_map_balanced47()
    if classes <= len(full):
        return full[:classes]
    return [str(i) for i in range(classes)]


def read_label_map(path: str | Path, classes: int) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != classes:
        raise InputError(f"{path}: label map has {len(lines)} lines, expected {classes}")
    for i, line in enumerate(lines):
        if len(line) != 1:
            raise InputError(f"{path}: line {i + 1} must hold exactly one character, got {line!r}")
    return lines


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, 1, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    label_map: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise InputError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.label_map)):
            raise InputError(
                f"label {int(self.labels.max())} outside the {len(self.label_map)}-class map"
            )
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise InputError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(self.images[indices], self.labels[indices], self.label_map)


def load_dataset(
    images_path, labels_path, label_map: list[str] | None = None, size: int = 32, invert: bool = False
) -> LabeledDataset:
    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    return LabeledDataset(
        preprocess(raw, size, invert) if len(raw) else np.zeros((0, 1, size, size), np.float32),
        labels,
        label_map or label_map_balanced47(),
    )
