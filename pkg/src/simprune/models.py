"""Model fixtures: seeded random networks and hand-built test cases."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .tensor import (
    ActivationKind,
    BnParams,
    ConvKernel,
    DenseHead,
    LayerBlock,
    ModelGraph,
    PoolSpec,
)

# Uniform(-0.3, 0.3) kernels give 3x3 single-channel slices squared norms
# around 0.1-1.0, covering both tight and loose shift-bound regimes.
KERNEL_SCALE = 0.3


def random_model(
    num_blocks: int = 4,
    channels: int | Sequence[int] = 8,
    in_channels: int = 3,
    kernel_size: int = 3,
    input_size: tuple[int, int] = (8, 8),
    num_classes: int | None = None,
    act: ActivationKind = ActivationKind.RELU,
    seed: int = 0,
    beta_range: tuple[float, float] = (-3.0, 3.0),
    gamma_range: tuple[float, float] = (0.5, 1.2),
) -> ModelGraph:
    """Seeded random Conv-BN-act chain.

    The default beta spread keeps channel statistics well separated
    relative to the cross-channel noise that empirical distance estimates
    carry; tighten or widen the ranges per fixture.
    """
    rng = np.random.default_rng(seed)
    if isinstance(channels, int):
        widths = [channels] * num_blocks
    else:
        widths = list(channels)
        num_blocks = len(widths)
    if not widths:
        raise ValueError("model needs at least one block")

    blocks = []
    fan_in = in_channels
    for width in widths:
        weights = rng.uniform(
            -KERNEL_SCALE, KERNEL_SCALE, (width, fan_in, kernel_size, kernel_size)
        ).astype(np.float32)
        bn = BnParams(
            gamma=rng.uniform(*gamma_range, width).astype(np.float32),
            beta=rng.uniform(*beta_range, width).astype(np.float32),
        )
        blocks.append(LayerBlock(conv=ConvKernel(weights), bn=bn, act=act))
        fan_in = width

    head = None
    if num_classes is not None:
        h, w = input_size
        for block in blocks:
            h, w = block.conv.output_size(h, w)
        in_features = widths[-1] * h * w
        head = DenseHead(
            weights=rng.uniform(-KERNEL_SCALE, KERNEL_SCALE, (num_classes, in_features)).astype(
                np.float32
            )
        )
    return ModelGraph(
        blocks=tuple(blocks),
        head=head,
        input_height=input_size[0],
        input_width=input_size[1],
    )


def well_separated_model(seed: int = 0) -> ModelGraph:
    """Four-block fixture for empirical-vs-closed-form matrix comparison.

    Wide beta spread and modest gammas make the closed-form matrix's scale
    dominate both sampling noise and the cross-channel covariance that the
    closed form's independence assumption ignores, so the measured matrices
    land within a few percent of it.
    """
    return random_model(
        num_blocks=4,
        channels=8,
        seed=seed,
        beta_range=(-4.0, 4.0),
        gamma_range=(0.25, 0.5),
    )


def duplicate_channel_model(seed: int = 0) -> ModelGraph:
    """Two-block fixture whose first layer carries an exact duplicate pair.

    Channels 1 and 2 of block 0 share both their conv filter and their BN
    parameters, so their post-activation maps are bit-identical on any
    input.  Their statistics distance (2 * 0.4^2 = 0.32) is the unique
    off-diagonal minimum, mapping to 0 under normalization, while every
    other normalized pair sits above 0.16: any threshold in (0, 0.16]
    merges exactly that pair.  Block 1 has uniform statistics (degenerate
    layer) and is never pruned.
    """
    rng = np.random.default_rng(seed)
    w0 = rng.uniform(-KERNEL_SCALE, KERNEL_SCALE, (4, 3, 3, 3)).astype(np.float32)
    w0[2] = w0[1]
    bn0 = BnParams(
        gamma=np.array([1.0, 0.4, 0.4, 0.9], dtype=np.float32),
        beta=np.array([-2.0, 0.5, 0.5, 2.0], dtype=np.float32),
    )
    w1 = rng.uniform(-KERNEL_SCALE, KERNEL_SCALE, (3, 4, 3, 3)).astype(np.float32)
    bn1 = BnParams(
        gamma=np.ones(3, dtype=np.float32), beta=np.zeros(3, dtype=np.float32)
    )
    head = DenseHead(
        weights=rng.uniform(-KERNEL_SCALE, KERNEL_SCALE, (2, 3 * 8 * 8)).astype(np.float32)
    )
    return ModelGraph(
        blocks=(
            LayerBlock(conv=ConvKernel(w0), bn=bn0),
            LayerBlock(conv=ConvKernel(w1), bn=bn1),
        ),
        head=head,
        input_height=8,
        input_width=8,
    )


# Channel widths of the 13-conv VGG-16 variant for 32x32 inputs; "M" marks a
# 2x2 max pool after the preceding block.
VGG16_LAYOUT = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512]


def vgg16_cifar(num_classes: int = 10) -> ModelGraph:
    """VGG-16 layout for 32x32 inputs, used for FLOPs accounting.

    Weights are zero-filled: only the architecture matters here.  The last
    conv block ends in a 2x2 average pool, collapsing the 2x2 map so the
    head sees exactly 512 features.
    """
    blocks = []
    fan_in = 3
    pending: int | None = None

    def flush(pool: PoolSpec | None):
        nonlocal pending, fan_in
        if pending is None:
            return
        blocks.append(
            LayerBlock(
                conv=ConvKernel(np.zeros((pending, fan_in, 3, 3), dtype=np.float32)),
                bn=BnParams(
                    gamma=np.ones(pending, dtype=np.float32),
                    beta=np.zeros(pending, dtype=np.float32),
                ),
                act=ActivationKind.RELU,
                pool=pool,
            )
        )
        fan_in = pending
        pending = None

    for item in VGG16_LAYOUT:
        if item == "M":
            flush(PoolSpec("max", 2))
        else:
            flush(None)
            pending = int(item)
    flush(PoolSpec("avg", 2))

    head = DenseHead(weights=np.zeros((num_classes, blocks[-1].out_channels), dtype=np.float32))
    return ModelGraph(blocks=tuple(blocks), head=head, input_height=32, input_width=32)
