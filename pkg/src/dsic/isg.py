"""Intra-scale selection: pick useful information from every block of a stage.

Coarse selection gates each former block of a stage with a channel-wise
signal derived from all of them and sums the survivors. Fine selection then
blends that sum with the stage's last block, channel by channel, using a
parameter-free signal computed from pooled statistics of both branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch
from .gate import OPEN_BIAS, GateMode, GateSignal, forced_signal, gate_apply, gate_openness, make_signals
from .nn import ConvParams, conv2d, global_pool, init_conv
from .tensor import (
    Tensor,
    activation,
    add,
    concat_channels,
    hadamard,
    one_minus,
    softmax_over_group,
    sum_tensors,
    zeros,
)


@dataclass
class StageBlocks:
    stage: int
    blocks: list[Tensor]
    sampling_stride: int = 1

    def __post_init__(self):
        if not self.blocks:
            raise ShapeMismatch(f"stage {self.stage} has no blocks")
        shape = self.blocks[0].shape
        if any(b.shape != shape for b in self.blocks):
            raise ShapeMismatch(f"stage {self.stage} blocks differ in shape")
        if self.sampling_stride not in (1, 2):
            raise ValueError("sampling_stride must be 1 or 2")

    @property
    def shape(self):
        return self.blocks[0].shape

    @property
    def last(self) -> Tensor:
        return self.blocks[-1]

    def former_indices(self) -> list[int]:
        """0-based indices of the former blocks that feed coarse selection.

        Counting backward from the last block in steps of ``sampling_stride``;
        the last block itself is excluded.
        """
        n = len(self.blocks)
        kept = range(n - 1 - self.sampling_stride, -1, -self.sampling_stride)
        return sorted(kept)


@dataclass
class CoarseParams:
    mix: ConvParams  # 1x1, (former * c) -> c
    proj: list[ConvParams]  # one 1x1 c -> c projection per former block


def init_coarse_params(
    rng: np.random.Generator, channels: int, n_former: int, gate_init: str = "closed"
) -> CoarseParams | None:
    if n_former == 0:
        return None
    mix = init_conv(rng, n_former * channels, channels, kernel=1)
    gain = 0.0 if gate_init == "zero" else 0.1
    bias = OPEN_BIAS if gate_init == "open" else 0.0
    proj = [init_conv(rng, channels, channels, kernel=1, gain=gain, bias=bias) for _ in range(n_former)]
    return CoarseParams(mix, proj)


@dataclass
class CoarseResult:
    b_signals: list[GateSignal]
    fused: Tensor
    block_indices: list[int] = field(default_factory=list)


@dataclass
class FineResult:
    a_signal: Tensor | None
    selected: Tensor


def coarse_select(
    blocks: StageBlocks,
    params: CoarseParams | None,
    mode: GateMode = GateMode.RECTIFIED_TANH,
    placement: str = "signal",
    force_b: float | None = None,
) -> CoarseResult:
    idx = blocks.former_indices()
    if not idx:
        return CoarseResult([], zeros(blocks.shape), [])
    former = [blocks.blocks[j] for j in idx]
    if force_b is not None:
        n, c = blocks.shape[:2]
        signals = [forced_signal(force_b, (n, c, 1, 1)) for _ in former]
    else:
        if params is None or len(params.proj) != len(former):
            raise ShapeMismatch(
                f"stage {blocks.stage}: coarse params sized for "
                f"{0 if params is None else len(params.proj)} blocks, got {len(former)}"
            )
        pooled = global_pool("avg", conv2d(concat_channels(former), params.mix))
        signals = make_signals([conv2d(pooled, p) for p in params.proj], mode)
    gated = [gate_apply(s, b, mode=mode, placement=placement) for s, b in zip(signals, former)]
    return CoarseResult(signals, sum_tensors(gated), idx)


def fine_signal(z: Tensor, mode: GateMode = GateMode.RECTIFIED_TANH) -> Tensor:
    pooled = add(global_pool("avg", z), global_pool("max", z))
    mode = GateMode.parse(mode)
    if mode is GateMode.SOFTMAX_GROUP:
        # the pair (a, 1 - a) is a two-way softmax over (pooled, 0)
        return softmax_over_group([pooled, zeros(pooled.shape)])[0]
    return activation(mode.value, pooled)


def fine_select(
    cs: CoarseResult,
    last_block: Tensor,
    mode: GateMode = GateMode.RECTIFIED_TANH,
    force_a: float | None = None,
) -> FineResult:
    if cs.fused.shape != last_block.shape:
        raise ShapeMismatch(f"fine selection shapes differ: {cs.fused.shape} vs {last_block.shape}")
    if not cs.b_signals:
        return FineResult(None, last_block)
    if force_a is not None:
        n, c = last_block.shape[:2]
        a = forced_signal(force_a, (n, c, 1, 1)).squashed
    else:
        a = fine_signal(add(cs.fused, last_block), mode)
    selected = add(hadamard(cs.fused, a), hadamard(last_block, one_minus(a)))
    return FineResult(a, selected)


@dataclass
class ISGRecord:
    """Per-stage openness: ``b[s]`` is ``(n, former)`` keyed by ``b_blocks[s]``, ``a[s]`` is ``(n,)``."""

    b: list[np.ndarray]
    b_blocks: list[list[int]]
    a: list[np.ndarray | None]


def isg_forward(
    stages: list[StageBlocks],
    params: list[CoarseParams | None],
    mode: GateMode = GateMode.RECTIFIED_TANH,
    placement: str = "signal",
    fs_enabled: bool = True,
    force_b: float | None = None,
    force_a: float | None = None,
) -> tuple[list[Tensor], ISGRecord]:
    if len(stages) != len(params):
        raise ShapeMismatch(f"{len(stages)} stages but {len(params)} parameter sets")
    pyramid = []
    rec = ISGRecord([], [], [])
    for blocks, p in zip(stages, params):
        cs = coarse_select(blocks, p, mode, placement, force_b)
        if not cs.b_signals:
            out, a = blocks.last, None
        elif fs_enabled:
            fs = fine_select(cs, blocks.last, mode, force_a)
            out, a = fs.selected, fs.a_signal
        else:
            out, a = add(cs.fused, blocks.last), None
        pyramid.append(out)
        n = blocks.shape[0]
        if cs.b_signals:
            rec.b.append(np.stack([gate_openness(s).mean(axis=1) for s in cs.b_signals], axis=1))
        else:
            rec.b.append(np.zeros((n, 0)))
        rec.b_blocks.append([j + 1 for j in cs.block_indices])
        rec.a.append(None if a is None else a.data.mean(axis=(1, 2, 3)))
    return pyramid, rec
