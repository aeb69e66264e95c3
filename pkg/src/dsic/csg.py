"""Cross-scale selection over a four-level pyramid (levels 2..5).

Every input level is resampled to every output level, giving a 4x4 lattice
``M[i][k]``. A per-level control unit looks at column ``k`` and emits one
scalar path gate ``w[i][k]`` and one single-channel spatial selection map
``s[i][k]`` per source. The output at level k is the sum over sources of the
gated, spatially selected lattice entries.

Lists are indexed 0..3 for levels 2..5 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .gate import OPEN_BIAS, GateMode, GateSignal, forced_signal, gate_apply, make_signals
from .nn import (
    ConvParams,
    channel_l2_normalize,
    conv2d,
    f_down,
    f_up,
    global_pool,
    init_conv,
)
from .tensor import (
    Tensor,
    add,
    concat_channels,
    constant,
    hadamard,
    relu,
    split_channels,
    sum_tensors,
)

LEVELS = (2, 3, 4, 5)
N_LEVELS = len(LEVELS)


@dataclass
class CCUParams:
    w_hidden: ConvParams  # 1x1, 4d -> d
    w_out: ConvParams  # 1x1, d -> 4
    s_src: list[ConvParams]  # 3x3, d -> 1, one per source level
    s_shared: ConvParams  # 3x3, d -> 1, applied to the normalized same-level entry


@dataclass
class CSGParams:
    proj: list[ConvParams]  # per level, 1x1 c_i -> d
    down: dict[tuple[int, int], list[ConvParams]]  # (i, k) with i < k -> k - i stride-2 convs
    ccu: list[CCUParams]  # one unit per output level

    @property
    def d(self) -> int:
        return self.proj[0].out_channels


def init_down_paths(rng: np.random.Generator, d: int) -> dict[tuple[int, int], list[ConvParams]]:
    return {
        (i, k): [init_conv(rng, d, d, kernel=3, stride=2, padding=1) for _ in range(k - i)]
        for i in range(N_LEVELS)
        for k in range(N_LEVELS)
        if i < k
    }


def init_csg_params(
    rng: np.random.Generator, in_channels: list[int], d: int, gate_init: str = "closed"
) -> CSGParams:
    proj = [init_conv(rng, c, d, kernel=1) for c in in_channels]
    down = init_down_paths(rng, d)
    gain = 0.0 if gate_init == "zero" else 1.0
    bias = OPEN_BIAS if gate_init == "open" else 0.0
    ccu = [
        CCUParams(
            w_hidden=init_conv(rng, N_LEVELS * d, d, kernel=1),
            w_out=init_conv(rng, d, N_LEVELS, kernel=1, gain=gain, bias=bias),
            s_src=[init_conv(rng, d, 1, kernel=3, gain=gain) for _ in range(N_LEVELS)],
            s_shared=init_conv(rng, d, 1, kernel=3, gain=gain, bias=bias),
        )
        for _ in range(N_LEVELS)
    ]
    return CSGParams(proj, down, ccu)


@dataclass
class CSGForcing:
    """Replace learned signals by constants. ``w`` is a 4x4 (source, target) grid."""

    w: np.ndarray | None = None
    s: float | None = None


@dataclass
class CCUOutput:
    w: list[GateSignal]  # per source, squashed shape (n, 1, 1, 1)
    s: list[Tensor]  # per source, (n, 1, h_k, w_k), already squashed


def check_pyramid(pyramid: list[Tensor]) -> None:
    if len(pyramid) != N_LEVELS:
        raise ShapeMismatch(f"expected {N_LEVELS} pyramid levels, got {len(pyramid)}")
    n, _, h, w = pyramid[0].shape
    for lvl, t in enumerate(pyramid):
        exp = (h >> lvl, w >> lvl)
        if t.shape[0] != n or t.shape[2:] != exp or (h >> lvl) << lvl != h:
            raise ShapeMismatch(f"level {LEVELS[lvl]} has shape {t.shape}; expected spatial {exp}")


def project_inputs(pyramid: list[Tensor], params: CSGParams) -> list[Tensor]:
    check_pyramid(pyramid)
    return [conv2d(x, p) for x, p in zip(pyramid, params.proj)]


def build_lattice(projected: list[Tensor], down: dict[tuple[int, int], list[ConvParams]]) -> list[list[Tensor]]:
    """``M[i][k]``: level i resampled to level k's resolution."""
    M = [[None] * N_LEVELS for _ in range(N_LEVELS)]
    for i, x in enumerate(projected):
        for k in range(N_LEVELS):
            if i < k:
                M[i][k] = f_down(x, k - i, down[(i, k)])
            elif i == k:
                M[i][k] = x
            else:
                M[i][k] = f_up(x, i - k)
    return M


def ccu(
    column: list[Tensor],
    k: int,
    params: CCUParams,
    mode: GateMode = GateMode.RECTIFIED_TANH,
) -> CCUOutput:
    """Control unit for output level index ``k`` given ``column[i] = M[i][k]``."""
    shape = column[0].shape
    if len(column) != N_LEVELS or any(m.shape != shape for m in column):
        raise ShapeMismatch("lattice column entries must share one shape")

    pooled = concat_channels([global_pool("avg", m) for m in column])
    hidden = relu(conv2d(pooled, params.w_hidden))
    w_raw = split_channels(conv2d(hidden, params.w_out), [1] * N_LEVELS)
    w = make_signals(w_raw, mode)

    normed = [channel_l2_normalize(m) for m in column]
    shared = conv2d(normed[k], params.s_shared)
    s_raw = [add(conv2d(nm, p), shared) for nm, p in zip(normed, params.s_src)]
    s = [sig.squashed for sig in make_signals(s_raw, mode)]
    return CCUOutput(w, s)


@dataclass
class CSGRecord:
    w: np.ndarray  # (n, 4, 4), rows = source level, cols = target level


def csg_forward(
    pyramid: list[Tensor],
    params: CSGParams,
    mode: GateMode = GateMode.RECTIFIED_TANH,
    placement: str = "signal",
    forcing: CSGForcing | None = None,
) -> tuple[list[Tensor], CSGRecord]:
    projected = project_inputs(pyramid, params)
    M = build_lattice(projected, params.down)
    n = pyramid[0].shape[0]
    openness = np.zeros((n, N_LEVELS, N_LEVELS))
    outputs = []
    for k in range(N_LEVELS):
        column = [M[i][k] for i in range(N_LEVELS)]
        if forcing is not None and forcing.w is not None and forcing.s is not None:
            out = None
        else:
            out = ccu(column, k, params.ccu[k], mode)
        terms = []
        for i in range(N_LEVELS):
            if forcing is not None and forcing.w is not None:
                w_ik = forced_signal(float(forcing.w[i][k]), (n, 1, 1, 1))
            else:
                w_ik = out.w[i]
            openness[:, i, k] = w_ik.squashed.data.reshape(n)
            if forcing is not None and forcing.s is not None:
                s_ik = constant(forcing.s, (n, 1) + column[i].shape[2:])
            else:
                s_ik = out.s[i]
            terms.append(hadamard(gate_apply(w_ik, column[i], mode=mode, placement=placement), s_ik))
        outputs.append(sum_tensors(terms))
    return outputs, CSGRecord(openness)
