"""Forward and backward kernels for every layer in the network.

All functions are pure: caches needed for the backward pass are returned
explicitly. Image tensors are ``(C, H, W)`` or batched ``(B, C, H, W)``;
dense inputs are ``(in,)`` or ``(B, in)``.

Convolution is cross-correlation with valid padding and stride 1. Pooling uses
a 2x2 window with stride 2; odd trailing rows/columns are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError, ShapeError


@dataclass
class ConvParams:
    kernels: np.ndarray  # (out_channels, in_channels, kH, kW)
    bias: np.ndarray  # (out_channels,)

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ShapeError(f"kernels must be rank 4, got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.kernels.shape[0]} output channels"
            )


@dataclass
class DenseParams:
    weight: np.ndarray  # (out_units, in_units)
    bias: np.ndarray  # (out_units,)

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"weight must be rank 2, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} rows"
            )


@dataclass
class DropoutSpec:
    p: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise InputError(f"dropout probability must be in [0, 1), got {self.p}")


@dataclass
class LayerGrad:
    input_grad: np.ndarray
    param_grads: dict[str, np.ndarray] = field(default_factory=dict)


def _as_batch(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    """Add a leading batch axis when ``x`` is a single sample."""
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


# ---------------------------------------------------------------- convolution


def _patches(xb: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Im2col matrix of shape (B*Ho*Wo, C*kh*kw)."""
    b, c = xb.shape[:2]
    win = sliding_window_view(xb, (kh, kw), axis=(2, 3))  # (B, C, Ho, Wo, kh, kw)
    ho, wo = win.shape[2:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)


def conv2d_forward(x: np.ndarray, k: ConvParams) -> np.ndarray:
    xb, single = _as_batch(np.asarray(x), 3)
    b, c, h, w = xb.shape
    o, kc, kh, kw = k.kernels.shape
    if kc != c:
        raise ShapeError(f"input has {c} channels, kernels expect {kc}")
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    ho, wo = h - kh + 1, w - kw + 1
    cols = _patches(xb, kh, kw)
    y = cols @ k.kernels.reshape(o, -1).T + k.bias
    y = y.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)
    return y[0] if single else y


def conv2d_backward(x: np.ndarray, k: ConvParams, upstream: np.ndarray) -> LayerGrad:
    xb, single = _as_batch(np.asarray(x), 3)
    ub, _ = _as_batch(np.asarray(upstream), 3)
    b, c, h, w = xb.shape
    o, _, kh, kw = k.kernels.shape
    ho, wo = h - kh + 1, w - kw + 1
    if ub.shape != (b, o, ho, wo):
        raise ShapeError(f"upstream shape {ub.shape} != forward output {(b, o, ho, wo)}")

    up = ub.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)
    cols = _patches(xb, kh, kw)
    dk = (up.T @ cols).reshape(k.kernels.shape)
    dbias = up.sum(axis=0)

    dcols = (up @ k.kernels.reshape(o, -1)).reshape(b, ho, wo, c, kh, kw)
    dx = np.zeros_like(xb, dtype=dcols.dtype)
    for m in range(kh):
        for n in range(kw):
            dx[:, :, m : m + ho, n : n + wo] += dcols[:, :, :, :, m, n].transpose(0, 3, 1, 2)
    return LayerGrad(dx[0] if single else dx, {"weight": dk, "bias": dbias})


# -------------------------------------------------------------------- pooling


@dataclass
class PoolCache:
    mode: str
    input_shape: tuple[int, ...]
    window_argmax: np.ndarray | None  # (B, C, Ho, Wo) index 0..3 within each window

    @property
    def output_shape(self) -> tuple[int, ...]:
        *lead, h, w = self.input_shape
        return (*lead, h // 2, w // 2)

    def source_indices(self) -> np.ndarray:
        """Flat index into each input (H, W) plane of every max-pool winner."""
        if self.window_argmax is None:
            raise InputError("source indices exist only for max pooling")
        h, w = self.input_shape[-2:]
        ho, wo = h // 2, w // 2
        rows = 2 * np.arange(ho)[:, None] + self.window_argmax // 2
        cols = 2 * np.arange(wo)[None, :] + self.window_argmax % 2
        return rows * w + cols


def pool2d_forward(x: np.ndarray, mode: str = "max") -> tuple[np.ndarray, PoolCache]:
    x = np.asarray(x)
    xb, single = _as_batch(x, 3)
    b, c, h, w = xb.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {h}x{w} too small for a 2x2 pool")
    win = (
        xb[:, :, : 2 * ho, : 2 * wo]
        .reshape(b, c, ho, 2, wo, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, ho, wo, 4)
    )
    if mode == "max":
        arg = win.argmax(axis=-1)  # first occurrence on ties
        y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    elif mode == "average":
        arg = None
        y = win.mean(axis=-1, dtype=x.dtype)
    else:
        raise InputError(f"unknown pooling mode {mode!r}")
    cache = PoolCache(mode, x.shape, None if arg is None else (arg[0] if single else arg))
    return (y[0] if single else y), cache


def pool2d_backward(cache: PoolCache, upstream: np.ndarray) -> np.ndarray:
    upstream = np.asarray(upstream)
    if upstream.shape != cache.output_shape:
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match pooled shape {cache.output_shape}"
        )
    ub, single = _as_batch(upstream, 3)
    b, c, ho, wo = ub.shape
    if cache.mode == "max":
        arg, _ = _as_batch(cache.window_argmax, 3)
        win = np.zeros((b, c, ho, wo, 4), dtype=ub.dtype)
        np.put_along_axis(win, arg[..., None], ub[..., None], axis=-1)
    else:
        win = np.repeat((ub / 4)[..., None], 4, axis=-1)
    h, w = cache.input_shape[-2:]
    dx = np.zeros((b, c, h, w), dtype=ub.dtype)
    dx[:, :, : 2 * ho, : 2 * wo] = (
        win.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * ho, 2 * wo)
    )
    return dx[0] if single else dx


# ----------------------------------------------------------- pointwise layers


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise ShapeError(f"relu_backward shape mismatch: {x.shape} vs {upstream.shape}")
    return np.where(x > 0, upstream, 0).astype(upstream.dtype, copy=False)


def dropout_forward(
    x: np.ndarray, spec: DropoutSpec, training: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. Returns the output and the boolean keep-mask."""
    x = np.asarray(x)
    if not training or spec.p == 0.0:
        return x.copy(), np.ones(x.shape, dtype=bool)
    rng = np.random.default_rng(spec.seed)
    mask = rng.random(x.shape) >= spec.p
    scale = x.dtype.type(1.0 / (1.0 - spec.p))
    return np.where(mask, x * scale, 0).astype(x.dtype, copy=False), mask


def dropout_backward(mask: np.ndarray, spec: DropoutSpec, upstream: np.ndarray) -> np.ndarray:
    if mask.shape != upstream.shape:
        raise ShapeError(f"mask shape {mask.shape} != upstream {upstream.shape}")
    scale = upstream.dtype.type(1.0 / (1.0 - spec.p))
    return np.where(mask, upstream * scale, 0).astype(upstream.dtype, copy=False)


# ---------------------------------------------------------------------- dense


def dense_forward(x: np.ndarray, p: DenseParams) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != p.weight.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} != weight columns {p.weight.shape[1]}")
    return x @ p.weight.T + p.bias


def dense_backward(x: np.ndarray, p: DenseParams, upstream: np.ndarray) -> LayerGrad:
    xb, single = _as_batch(np.asarray(x), 1)
    ub, _ = _as_batch(np.asarray(upstream), 1)
    if ub.shape != (xb.shape[0], p.weight.shape[0]):
        raise ShapeError(f"upstream shape {ub.shape} does not match dense output")
    dx = ub @ p.weight
    return LayerGrad(
        dx[0] if single else dx,
        {"weight": ub.T @ xb, "bias": ub.sum(axis=0)},
    )


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    if z.shape[-1] < 1:
        raise ShapeError("softmax needs at least one logit")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
