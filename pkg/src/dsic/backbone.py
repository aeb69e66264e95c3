"""A small plain-conv backbone that keeps every block output.

The stem downsamples the image by 4, so stage 2 runs at stride 4; the first
block of each later stage is a stride-2 conv. Every block is a 3x3 conv
followed by a rectifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadInputSize
from .isg import StageBlocks
from .nn import ConvParams, conv2d, init_conv
from .tensor import Tensor, relu

STAGES = (2, 3, 4, 5)


@dataclass
class BackboneParams:
    stem: list[ConvParams]
    stages: list[list[ConvParams]]


def init_backbone(rng: np.random.Generator, channels=(8, 16, 32, 64), blocks=(3, 3, 3, 3)) -> BackboneParams:
    # gain sqrt(6) gives He-style variance for uniform init ahead of a relu
    gain = np.sqrt(6.0)
    c2 = channels[0]
    stem = [
        init_conv(rng, 1, c2, stride=2, gain=gain),
        init_conv(rng, c2, c2, stride=2, gain=gain),
    ]
    stages = []
    prev = c2
    for s, (c, n) in enumerate(zip(channels, blocks)):
        convs = []
        for j in range(n):
            stride = 2 if (s > 0 and j == 0) else 1
            convs.append(init_conv(rng, prev, c, stride=stride, gain=gain))
            prev = c
        stages.append(convs)
    return BackboneParams(stem, stages)


def calibrate_backbone(params: BackboneParams, images: np.ndarray, target_rms: float = 1.0) -> None:
    """Rescale each conv in order so its rectified output has ``target_rms`` on a calibration batch.

    A plain relu stack loses scale at every zero-padded border, so without
    this the deepest stage starts orders of magnitude smaller than the image.
    Rescaling a bias-free relu layer rescales its output exactly, so one pass
    suffices.
    """
    x = Tensor(images)
    for p in [*params.stem, *(c for convs in params.stages for c in convs)]:
        y = relu(conv2d(x, p)).data
        rms = float(np.sqrt(np.mean(y * y)))
        if rms > 0:
            factor = target_rms / rms
            p.weight.data *= factor
            p.bias.data *= factor
            y = y * factor
        x = Tensor(y)


def backbone_forward(image: Tensor, params: BackboneParams, sampling_stride: int = 1) -> list[StageBlocks]:
    n, c, h, w = image.shape
    if c != 1 or h != w or h < 32 or h & (h - 1):
        raise BadInputSize(f"expected (n, 1, S, S) with S a power of two >= 32, got {image.shape}")
    x = image
    for p in params.stem:
        x = relu(conv2d(x, p))
    out = []
    for stage, convs in zip(STAGES, params.stages):
        blocks = []
        for p in convs:
            x = relu(conv2d(x, p))
            blocks.append(x)
        out.append(StageBlocks(stage, blocks, sampling_stride))
    return out
