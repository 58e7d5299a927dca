"""Binary checkpoint format.

Layout (little-endian)::

    b"HTRC"  u32 version=1  u32 record_count
    per record:
        u8 tag (0=conv, 1=dense)  u32 rank  u32 extents[rank]
        f32 weights[prod(extents)]            (row-major)
        u32 bias_len  f32 bias[bias_len]

Only weights are stored. The architecture is recovered from the record shapes;
the input spatial size is taken from the caller when given, otherwise the
smallest square size consistent with the first dense layer (32 preferred).
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .model import Conv2D, Dense, Dropout, Flatten, MaxPool, Model, ModelConfig, ReLU

MAGIC = b"HTRC"
VERSION = 1
TAG_CONV = 0
TAG_DENSE = 1


def dumps(model: Model) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(model.parametric()))]
    for _, layer in model.parametric():
        w = np.ascontiguousarray(layer.params["weight"], dtype="<f4")
        b = np.ascontiguousarray(layer.params["bias"], dtype="<f4")
        out.append(struct.pack("<BI", layer.tag, w.ndim))
        out.append(struct.pack(f"<{w.ndim}I", *w.shape))
        out.append(w.tobytes())
        out.append(struct.pack("<I", b.size))
        out.append(b.tobytes())
    return b"".join(out)


def save(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(
                f"{self.source}: truncated checkpoint at offset {self.pos}: "
                f"need {n} bytes, {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def _records(data: bytes, source: str) -> list[tuple[int, np.ndarray, np.ndarray]]:
    r = _Reader(data, source)
    if r.take(4) != MAGIC:
        raise ParseError(f"{source}: bad checkpoint magic (expected {MAGIC!r})")
    version = r.u32()
    if version != VERSION:
        raise ParseError(f"{source}: unsupported checkpoint version {version}")
    records = []
    for i in range(r.u32()):
        tag = r.take(1)[0]
        if tag not in (TAG_CONV, TAG_DENSE):
            raise ParseError(f"{source}: record {i} has unknown layer tag {tag}")
        rank = r.u32()
        if rank != (4 if tag == TAG_CONV else 2):
            raise ParseError(f"{source}: record {i} has rank {rank} for tag {tag}")
        shape = tuple(r.u32() for _ in range(rank))
        weight = r.f32(math.prod(shape)).reshape(shape)
        bias = r.f32(r.u32())
        if bias.size != shape[0]:
            raise ParseError(f"{source}: record {i} bias length {bias.size} != {shape[0]}")
        records.append((tag, weight, bias))
    if r.pos != len(data):
        raise ParseError(f"{source}: {len(data) - r.pos} trailing bytes after last record")
    return records


def _infer_input(records, channels: int, blocks) -> tuple[int, int, int]:
    dense_in = next(w.shape[1] for tag, w, _ in records if tag == TAG_DENSE)
    candidates = [32, *range(1, 4097)]
    for side in candidates:
        cfg = ModelConfig((channels, side, side), blocks, (), 0.0, 2)
        try:
            if cfg.flatten_width() == dense_in:
                return (channels, side, side)
        except ConfigError:
            continue
    raise ParseError(f"cannot infer an input size yielding flatten width {dense_in}")


def loads(
    data: bytes,
    input_shape: tuple[int, int, int] | None = None,
    dropout_p: float = 0.5,
    source: str = "<bytes>",
) -> Model:
    records = _records(data, source)
    convs = [(w, b) for tag, w, b in records if tag == TAG_CONV]
    denses = [(w, b) for tag, w, b in records if tag == TAG_DENSE]
    if not denses or any(t == TAG_CONV for t, *_ in records[len(convs) :]):
        raise ParseError(f"{source}: records must be conv* followed by dense+")

    for i, (w, _) in enumerate(convs):
        if w.shape[2] != w.shape[3]:
            raise ParseError(f"{source}: conv record {i} has a non-square kernel {w.shape[2:]}")
        if i and w.shape[1] != convs[i - 1][0].shape[0]:
            raise ParseError(f"{source}: conv record {i} input channels do not chain")
    for i in range(1, len(denses)):
        if denses[i][0].shape[1] != denses[i - 1][0].shape[0]:
            raise ParseError(f"{source}: dense record {i} input width does not chain")

    blocks = tuple((w.shape[0], w.shape[2]) for w, _ in convs)
    if input_shape is None:
        if convs:
            channels = convs[0][0].shape[1]
            input_shape = _infer_input(records, channels, blocks)
        else:
            side = math.isqrt(denses[0][0].shape[1])
            input_shape = (1, side, side)
    config = ModelConfig(
        input=input_shape,
        conv_blocks=blocks,
        dense_units=tuple(w.shape[0] for w, _ in denses[:-1]),
        dropout_p=dropout_p,
        classes=denses[-1][0].shape[0],
    )
    try:
        config.validate()
    except ConfigError as exc:
        raise ParseError(f"{source}: checkpoint does not fit input {input_shape}: {exc}") from exc
    if config.flatten_width() != denses[0][0].shape[1]:
        raise ParseError(
            f"{source}: first dense layer expects {denses[0][0].shape[1]} inputs, "
            f"input {input_shape} flattens to {config.flatten_width()}"
        )

    stack = []
    for w, b in convs:
        stack += [Conv2D(w, b), ReLU(), MaxPool()]
    stack += [Dropout(dropout_p), Flatten()]
    for w, b in denses:
        stack += [Dense(w, b), ReLU()]
    stack.pop()
    return Model(config, stack, config.classes)


def load(path: str | Path, input_shape=None, dropout_p: float = 0.5) -> Model:
    path = Path(path)
    return loads(path.read_bytes(), input_shape, dropout_p, source=str(path))
