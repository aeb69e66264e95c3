"""Fixed reference connectors: classic top-down FPN and fully connected FPN.

These double as training baselines and as oracles for the gated connector:
forcing the gates into the matching on/off pattern must reproduce them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .nn import ConvParams, conv2d, f_down, f_up, init_conv
from .tensor import Tensor, add, sum_tensors

TOPOLOGIES = ("fpn", "fc_fpn", "dsic", "dsic_inside_fpn", "dsic_after_fpn")

Upsampler = Callable[[Tensor, int], Tensor]


@dataclass(frozen=True)
class ConnectorTopology:
    kind: str = "dsic"
    merge: str = "sum"
    d: int = 32

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise ConfigError(f"unknown connector kind {self.kind!r}; expected one of {TOPOLOGIES}")
        if self.merge != "sum":
            raise ConfigError("only sum merging is supported")

    @property
    def gated(self) -> bool:
        return self.kind.startswith("dsic")


@dataclass
class FPNParams:
    lateral: list[ConvParams]  # 1x1 c_i -> d
    smooth: list[ConvParams] | None = None  # optional 3x3 d -> d after merging


def init_fpn_params(rng: np.random.Generator, in_channels: list[int], d: int, smooth: bool = False) -> FPNParams:
    lateral = [init_conv(rng, c, d, kernel=1) for c in in_channels]
    sm = [init_conv(rng, d, d, kernel=3) for _ in in_channels] if smooth else None
    return FPNParams(lateral, sm)


def _check(pyramid: list[Tensor], lateral: list[ConvParams]) -> None:
    if len(pyramid) != 4 or len(lateral) != 4:
        raise ShapeMismatch("reference connectors expect exactly 4 levels")
    _, _, h, w = pyramid[0].shape
    for lvl, x in enumerate(pyramid):
        if x.shape[2:] != (h >> lvl, w >> lvl):
            raise ShapeMismatch(f"level {lvl + 2} is {x.shape[2:]}, expected {(h >> lvl, w >> lvl)}")


def fpn_forward(pyramid: list[Tensor], params: FPNParams, upsample: Upsampler = f_up) -> list[Tensor]:
    """Top-down pathway: P5 = L5, Pk = Lk + up2(P(k+1)), optional smoothing last."""
    _check(pyramid, params.lateral)
    lat = [conv2d(x, p) for x, p in zip(pyramid, params.lateral)]
    outs = [None] * 4
    outs[3] = lat[3]
    for k in (2, 1, 0):
        outs[k] = add(lat[k], upsample(outs[k + 1], 1))
    if params.smooth is not None:
        outs = [conv2d(o, p) for o, p in zip(outs, params.smooth)]
    return outs


def resample_to(x: Tensor, src: int, dst: int, down: dict, upsample: Upsampler = f_up) -> Tensor:
    if src < dst:
        return f_down(x, dst - src, down[(src, dst)])
    if src > dst:
        return upsample(x, src - dst)
    return x


def fc_fpn_forward(
    pyramid: list[Tensor],
    lateral: list[ConvParams],
    down: dict[tuple[int, int], list[ConvParams]],
    upsample: Upsampler = f_up,
) -> list[Tensor]:
    """Every lateral feeds every output level: Pk = sum_i resample(Li -> k)."""
    _check(pyramid, lateral)
    lat = [conv2d(x, p) for x, p in zip(pyramid, lateral)]
    return [sum_tensors([resample_to(lat[i], i, k, down, upsample) for i in range(4)]) for k in range(4)]
