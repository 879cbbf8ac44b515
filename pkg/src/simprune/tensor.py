"""Minimal dense-tensor engine for single-branch Conv-BN-activation networks.

Activations live in channels-first, batch-last layout ``(C, H, W, B)`` so
that per-channel statistics and channel slicing stay contiguous.  All
forward operations are pure: they never mutate their inputs and return
fresh tensors.  Values are 32-bit floats; reductions (means, variances)
accumulate in 64-bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ShapeError(ValueError):
    """Shape or invariant violation, tagged with the offending dimension."""

    def __init__(self, dimension: str, message: str):
        self.dimension = dimension
        super().__init__(f"{dimension}: {message}")


class NumericalError(RuntimeError):
    """Internal error: an operation produced non-finite values."""


def _as_f32(arr, name: str, ndim: int) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float32)
    if out.ndim != ndim:
        raise ShapeError(name, f"expected {ndim}-d array, got {out.ndim}-d")
    out = np.ascontiguousarray(out)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Tensor4:
    """Dense activation/weight container with (C, H, W, B) layout.

    ``data`` is row-major over (channel, height, width, batch), so
    ``data[c]`` is one channel's full slice of H*W*B values.
    """

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_f32(self.data, "data", 4))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def batch(self) -> int:
        return self.data.shape[3]

    @property
    def channel_size(self) -> int:
        """Number of activations per channel: H * W * B."""
        h, w, b = self.data.shape[1:]
        return h * w * b

    def channel(self, c: int) -> np.ndarray:
        """Read-only (H, W, B) view of one channel."""
        return self.data[c]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())


@dataclass(frozen=True)
class ConvKernel:
    """Square convolution kernel bank, weights in (out, in, kh, kw) order.

    ``padding`` defaults to kernel_size // 2 (size-preserving for stride 1).
    Convolution carries no bias term: batch normalization downstream would
    cancel it anyway.
    """

    weights: np.ndarray
    stride: int = 1
    padding: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_f32(self.weights, "weights", 4))
        kh, kw = self.weights.shape[2], self.weights.shape[3]
        if kh != kw:
            raise ShapeError("kernel_size", f"kernel must be square, got {kh}x{kw}")
        if self.padding is None:
            object.__setattr__(self, "padding", kh // 2)
        if self.stride < 1:
            raise ShapeError("stride", f"must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError("padding", f"must be >= 0, got {self.padding}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        """Spatial output dims under standard convolution arithmetic."""
        k, s, p = self.kernel_size, self.stride, self.padding
        h_out = (height + 2 * p - k) // s + 1
        w_out = (width + 2 * p - k) // s + 1
        if h_out < 1 or w_out < 1:
            raise ShapeError(
                "height" if h_out < 1 else "width",
                f"kernel {k} with stride {s}, padding {p} produces empty "
                f"output from {height}x{width} input",
            )
        return h_out, w_out


@dataclass(frozen=True)
class BnParams:
    """Per-channel batch-normalization affine parameters."""

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "gamma", _as_f32(self.gamma, "gamma", 1))
        object.__setattr__(self, "beta", _as_f32(self.beta, "beta", 1))
        if self.gamma.shape != self.beta.shape:
            raise ShapeError(
                "beta",
                f"length {self.beta.shape[0]} != gamma length {self.gamma.shape[0]}",
            )
        if not self.eps > 0:
            raise ShapeError("eps", f"must be > 0, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


class ActivationKind(enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


@dataclass(frozen=True)
class PoolSpec:
    """Pooling annotation attached after a block's activation.

    Used only for FLOPs accounting and spatial-geometry propagation;
    the forward operations do not evaluate pooling.
    """

    kind: str  # "max" or "avg"
    size: int = 2

    def __post_init__(self):
        if self.kind not in ("max", "avg"):
            raise ShapeError("pool.kind", f"unknown pool kind {self.kind!r}")
        if self.size < 2:
            raise ShapeError("pool.size", f"must be >= 2, got {self.size}")

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        h_out, w_out = height // self.size, width // self.size
        if h_out < 1 or w_out < 1:
            raise ShapeError("pool.size", f"pool {self.size} empties {height}x{width} map")
        return h_out, w_out


@dataclass(frozen=True)
class LayerBlock:
    """One Conv -> BN -> activation block, with an optional pool annotation."""

    conv: ConvKernel
    bn: BnParams
    act: ActivationKind = ActivationKind.RELU
    pool: PoolSpec | None = None

    def __post_init__(self):
        if self.bn.channels != self.conv.out_channels:
            raise ShapeError(
                "gamma",
                f"BN arrays sized {self.bn.channels} but conv has "
                f"{self.conv.out_channels} output channels",
            )

    @property
    def out_channels(self) -> int:
        return self.conv.out_channels

    @property
    def in_channels(self) -> int:
        return self.conv.in_channels


@dataclass(frozen=True)
class DenseHead:
    """Dense classifier head; participates in FLOPs accounting only.

    ``weights`` is (out_features, in_features) with the input axis flattened
    from (channel, h, w) in row-major order.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_f32(self.weights, "head.weights", 2))
        if self.bias is not None:
            object.__setattr__(self, "bias", _as_f32(self.bias, "head.bias", 1))
            if self.bias.shape[0] != self.weights.shape[0]:
                raise ShapeError(
                    "head.bias",
                    f"length {self.bias.shape[0]} != out_features {self.weights.shape[0]}",
                )

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ModelGraph:
    """Single-branch chain of LayerBlocks plus an optional dense head.

    ``input_height``/``input_width`` fix the spatial geometry the model
    expects, which FLOPs accounting and head validation depend on.
    """

    blocks: tuple[LayerBlock, ...]
    head: DenseHead | None = None
    input_height: int = 8
    input_width: int = 8

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ShapeError("blocks", "model must contain at least one block")
        if self.input_height < 1 or self.input_width < 1:
            raise ShapeError("input_size", "input dims must be >= 1")
        for i in range(1, len(self.blocks)):
            prev, cur = self.blocks[i - 1], self.blocks[i]
            if cur.in_channels != prev.out_channels:
                raise ShapeError(
                    "in_channels",
                    f"block {i} expects {cur.in_channels} input channels but "
                    f"block {i - 1} produces {prev.out_channels}",
                )
        if self.head is not None:
            h, w = self.output_geometry()[-1]
            expected = self.blocks[-1].out_channels * h * w
            if self.head.in_features != expected:
                raise ShapeError(
                    "head.in_features",
                    f"{self.head.in_features} != final feature size {expected} "
                    f"({self.blocks[-1].out_channels} channels x {h}x{w})",
                )

    @property
    def in_channels(self) -> int:
        return self.blocks[0].in_channels

    def output_geometry(self) -> list[tuple[int, int]]:
        """Spatial (H, W) after each block, pools included."""
        h, w = self.input_height, self.input_width
        out = []
        for block in self.blocks:
            h, w = block.conv.output_size(h, w)
            if block.pool is not None:
                h, w = block.pool.output_size(h, w)
            out.append((h, w))
        return out

    def has_pooling(self) -> bool:
        return any(b.pool is not None for b in self.blocks)


# ---------------------------------------------------------------------------
# forward operations


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """Unfold (C, H, W, B) into (C*k*k, H_out*W_out*B) patch columns."""
    c, h, w, b = x.shape
    if padding > 0:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    cols = np.empty((c, k, k, h_out, w_out, b), dtype=x.dtype)
    for kh in range(k):
        for kw in range(k):
            cols[:, kh, kw] = x[
                :,
                kh : kh + stride * h_out : stride,
                kw : kw + stride * w_out : stride,
                :,
            ]
    return cols.reshape(c * k * k, h_out * w_out * b), h_out, w_out


def conv2d(input: Tensor4, kernel: ConvKernel) -> Tensor4:
    """2-d convolution (cross-correlation form, no bias)."""
    if input.channels != kernel.in_channels:
        raise ShapeError(
            "in_channels",
            f"input has {input.channels} channels, kernel expects {kernel.in_channels}",
        )
    h_out, w_out = kernel.output_size(input.height, input.width)
    cols, h_out, w_out = _im2col(
        input.data, kernel.kernel_size, kernel.stride, kernel.padding
    )
    wmat = kernel.weights.reshape(kernel.out_channels, -1)
    out = wmat @ cols
    return Tensor4(out.reshape(kernel.out_channels, h_out, w_out, input.batch))


def bn_forward(input: Tensor4, bn: BnParams) -> Tensor4:
    """Batch normalization from this tensor's own per-channel statistics.

    Each channel is normalized by the mean and (population) variance of its
    H*W*B activations, then scaled by gamma and shifted by beta.  No running
    statistics are kept.
    """
    if bn.channels != input.channels:
        raise ShapeError(
            "gamma",
            f"BN sized for {bn.channels} channels, input has {input.channels}",
        )
    x = input.data
    mu = x.mean(axis=(1, 2, 3), dtype=np.float64)
    var = x.var(axis=(1, 2, 3), dtype=np.float64)
    scale = bn.gamma.astype(np.float64) / np.sqrt(var + bn.eps)
    shift = bn.beta.astype(np.float64) - scale * mu
    out = x * scale[:, None, None, None] + shift[:, None, None, None]
    out = out.astype(np.float32)
    if not np.isfinite(out).all():
        raise NumericalError("batch normalization produced non-finite values")
    return Tensor4(out)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split form avoids exp overflow for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(x: np.ndarray, kind: ActivationKind) -> np.ndarray:
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0)
    if kind is ActivationKind.SIGMOID:
        return _sigmoid(x)
    return x


def activation(input: Tensor4, kind: ActivationKind) -> Tensor4:
    """Elementwise ReLU / sigmoid / identity."""
    if kind is ActivationKind.IDENTITY:
        return input
    return Tensor4(apply_activation(input.data, kind))


class BlockActivations(NamedTuple):
    pre_bn: Tensor4
    post_bn: Tensor4
    post_act: Tensor4


def block_forward(input: Tensor4, block: LayerBlock) -> BlockActivations:
    """Run one block and return all three stages.

    Distances are measured on the post-BN stage; pruning shifts are measured
    on the next block's pre-BN stage, so callers need every intermediate.
    """
    pre_bn = conv2d(input, block.conv)
    post_bn = bn_forward(pre_bn, block.bn)
    post_act = activation(post_bn, block.act)
    return BlockActivations(pre_bn, post_bn, post_act)


def model_forward(input: Tensor4, model: ModelGraph) -> list[BlockActivations]:
    """Forward through every block, collecting per-block activations.

    Models carrying pool annotations are rejected: pooling exists only for
    FLOPs accounting and has no forward implementation here.
    """
    if model.has_pooling():
        raise ShapeError("pool", "forward pass does not support pooled models")
    acts = []
    current = input
    for block in model.blocks:
        stages = block_forward(current, block)
        acts.append(stages)
        current = stages.post_act
    return acts
