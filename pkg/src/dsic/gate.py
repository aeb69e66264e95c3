"""Gate operator: scale a data-flow path by a squashed control signal.

Two placements are supported. ``signal`` (default) squashes the control signal
first and multiplies the adapted input by it, so a coefficient of 0 closes
the path and 1 passes it unchanged. ``outer`` applies the activation after the
product instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .nn import ConvParams, conv2d
from .tensor import Tensor, activation, constant, hadamard, softmax_over_group, sum_tensors

OPEN_BIAS = 1.0  # signal bias for gate_init="open": tanh(1) ~ 0.76


class GateMode(str, Enum):
    SOFTMAX_GROUP = "softmax_group"
    SIGMOID = "sigmoid"
    RECTIFIED_TANH = "rectified_tanh"

    @classmethod
    def parse(cls, value) -> "GateMode":
        if isinstance(value, cls):
            return value
        aliases = {"softmax": cls.SOFTMAX_GROUP, "tanh": cls.RECTIFIED_TANH}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ConfigError(f"unknown gate mode {value!r}") from None


PLACEMENTS = ("signal", "outer")


@dataclass
class GateSignal:
    raw: Tensor
    squashed: Tensor

    @property
    def shape(self):
        return self.raw.shape


def make_signals(raws: Sequence[Tensor], mode: GateMode) -> list[GateSignal]:
    """Squash a group of raw signals. Softmax normalizes across the group."""
    mode = GateMode.parse(mode)
    if mode is GateMode.SOFTMAX_GROUP:
        squashed = softmax_over_group(list(raws))
    else:
        squashed = [activation(mode.value, r) for r in raws]
    return [GateSignal(r, s) for r, s in zip(raws, squashed)]


def forced_signal(value: float, shape) -> GateSignal:
    """A constant signal whose squashed value is ``value`` (for topology forcing)."""
    t = constant(value, shape)
    return GateSignal(t, t)


def adapt(x: Tensor, adapters: Sequence[ConvParams] = ()) -> Tensor:
    """Sum of the adapter convolutions applied to ``x``; identity when empty."""
    if not adapters:
        return x
    outs = [conv2d(x, p) for p in adapters]
    shapes = {o.shape for o in outs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"adapters disagree on output shape: {sorted(shapes)}")
    return sum_tensors(outs)


def gate_apply(
    signal: GateSignal,
    x: Tensor,
    adapters: Sequence[ConvParams] = (),
    mode: GateMode = GateMode.RECTIFIED_TANH,
    placement: str = "signal",
) -> Tensor:
    flow = adapt(x, adapters)
    m = signal.shape[1]
    if m not in (1, flow.shape[1]):
        raise ShapeMismatch(f"gate signal has {m} channels, flow has {flow.shape[1]}")
    if placement == "signal":
        return hadamard(flow, signal.squashed)
    if placement == "outer":
        mode = GateMode.parse(mode)
        if mode is GateMode.SOFTMAX_GROUP:
            raise ConfigError("outer placement cannot be combined with softmax_group mode")
        return activation(mode.value, hadamard(flow, signal.raw))
    raise ConfigError(f"unknown gate placement {placement!r}")


def gate_openness(signal: GateSignal) -> np.ndarray:
    """Mean squashed value per sample and channel, shape ``(n, m)``."""
    return signal.squashed.data.mean(axis=(2, 3))
