"""Convolution, bilinear resampling and pooling on top of :mod:`dsic.tensor`."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import faults
from .errors import DegenerateOutput, InvalidFactor, ShapeMismatch
from .tensor import Tensor, _node, note_branch


@dataclass
class ConvParams:
    """Weights ``(out_c, in_c, k, k)``, bias ``(1, out_c, 1, 1)``, stride and padding."""

    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        oc, _, kh, kw = self.weight.shape
        if kh not in (1, 3) or kw not in (1, 3):
            raise ShapeMismatch(f"only 1x1 and 3x3 kernels are supported, got {kh}x{kw}")
        if self.bias.shape != (1, oc, 1, 1):
            raise ShapeMismatch(f"bias shape {self.bias.shape} does not match {oc} output channels")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def init_conv(
    rng: np.random.Generator,
    in_c: int,
    out_c: int,
    kernel: int = 3,
    stride: int = 1,
    padding: int | None = None,
    gain: float = 1.0,
    bias: float = 0.0,
) -> ConvParams:
    """Uniform(-b, b) weights with b = gain / sqrt(fan_in); constant bias."""
    if padding is None:
        padding = kernel // 2
    bound = gain / np.sqrt(in_c * kernel * kernel)
    w = rng.uniform(-bound, bound, size=(out_c, in_c, kernel, kernel))
    return ConvParams(
        Tensor(w, requires_grad=True),
        Tensor(np.full((1, out_c, 1, 1), float(bias)), requires_grad=True),
        stride,
        padding,
    )


def identity_conv(channels: int) -> ConvParams:
    """1x1 conv that copies its input."""
    w = np.eye(channels).reshape(channels, channels, 1, 1)
    return ConvParams(Tensor(w, requires_grad=True), Tensor(np.zeros((1, channels, 1, 1)), requires_grad=True))


def identity_center_conv(channels: int) -> ConvParams:
    """3x3 stride-2 pad-1 conv whose only nonzero taps are the per-channel centers."""
    w = np.zeros((channels, channels, 3, 3))
    w[np.arange(channels), np.arange(channels), 1, 1] = 1.0
    return ConvParams(
        Tensor(w, requires_grad=True), Tensor(np.zeros((1, channels, 1, 1)), requires_grad=True), 2, 1
    )


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlation with bias, differentiable in x, weight and bias."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = p.weight.shape
    if c != ic:
        raise ShapeMismatch(f"conv expects {ic} input channels, got {c}")
    oh, ow = p.output_hw(h, w)
    if oh < 1 or ow < 1:
        raise DegenerateOutput(f"conv output would be {oh}x{ow} for input {h}x{w}")
    s, pad = p.stride, p.padding
    W = p.weight.data
    b = p.bias.data

    if kh == 1 and kw == 1 and pad == 0:
        xs = x.data[:, :, ::s, ::s]
        Wm = W[:, :, 0, 0]
        out = np.einsum("nchw,oc->nohw", xs, Wm, optimize=True) + b

        def grad_x1(g):
            gx = np.einsum("nohw,oc->nchw", g, Wm, optimize=True)
            if s == 1:
                return gx
            full = np.zeros(x.shape)
            full[:, :, ::s, ::s] = gx
            return full

        def grad_w1(g):
            return np.einsum("nohw,nchw->oc", g, xs, optimize=True)[:, :, None, None]

        return _node(
            out,
            [(x, grad_x1), (p.weight, grad_w1), (p.bias, lambda g: g.sum(axis=(0, 2, 3), keepdims=True))],
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, : s * (oh - 1) + 1 : s, : s * (ow - 1) + 1 : s]
    # win: (n, c, oh, ow, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)
    Wm = W.reshape(oc, c * kh * kw)
    out = (cols @ Wm.T).reshape(n, oh, ow, oc).transpose(0, 3, 1, 2) + b

    def grad_x(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, oc)
        dcols = (gm @ Wm).reshape(n, oh, ow, c, kh, kw)
        dxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        if pad:
            return dxp[:, :, pad:-pad, pad:-pad]
        return dxp

    def grad_w(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, oc)
        return (gm.T @ cols).reshape(oc, c, kh, kw)

    return _node(
        out,
        [(x, grad_x), (p.weight, grad_w), (p.bias, lambda g: g.sum(axis=(0, 2, 3), keepdims=True))],
    )


# ---------------------------------------------------------------- bilinear


@lru_cache(maxsize=None)
def _interp_matrix(size: int, factor: int, corrupt: bool = False) -> np.ndarray:
    """Row o holds the align-corners-false weights for output sample o.

    Source coordinate is (o + 0.5) / factor - 0.5, clamped at the edges.
    """
    out = size * factor
    m = np.zeros((out, size))
    for o in range(out):
        src = max((o + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(np.floor(src)), size - 1)
        i1 = min(i0 + 1, size - 1)
        lam = src - i0
        if corrupt:
            lam = 0.9 * lam
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    if corrupt:
        m *= 1.01
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def _octave_matrix(size: int, t: int, corrupt: bool = False) -> np.ndarray:
    """t successive x2 steps folded into one matrix."""
    m = np.eye(size)
    cur = size
    for _ in range(t):
        m = _interp_matrix(cur, 2, corrupt) @ m
        cur *= 2
    m.setflags(write=False)
    return m


def _apply_separable(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    out = mh @ x.data @ mw.T
    return _node(out, [(x, lambda g: mh.T @ g @ mw)])


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if factor not in (2, 4, 8):
        raise InvalidFactor(f"upsample factor must be 2, 4 or 8, got {factor}")
    corrupt = "bilinear" in faults.ACTIVE
    _, _, h, w = x.shape
    return _apply_separable(x, _interp_matrix(h, factor, corrupt), _interp_matrix(w, factor, corrupt))


def f_up(x: Tensor, t: int) -> Tensor:
    """Upsample by 2**t as t successive x2 bilinear steps."""
    if t not in (1, 2, 3):
        raise InvalidFactor(f"f_up exponent must be 1, 2 or 3, got {t}")
    if t == 1:
        return bilinear_upsample(x, 2)
    corrupt = "bilinear" in faults.ACTIVE
    _, _, h, w = x.shape
    return _apply_separable(x, _octave_matrix(h, t, corrupt), _octave_matrix(w, t, corrupt))


def f_down(x: Tensor, t: int, params: list[ConvParams]) -> Tensor:
    """t successive stride-2 3x3 convolutions."""
    if t < 1 or len(params) != t:
        raise ValueError(f"f_down needs t >= 1 and exactly t param sets (t={t}, got {len(params)})")
    for p in params:
        if p.kernel != 3 or p.stride != 2 or p.padding != 1 or p.in_channels != p.out_channels:
            raise ShapeMismatch("f_down params must be channel-preserving 3x3 stride-2 pad-1 convs")
    for p in params:
        x = conv2d(x, p)
    return x


# ---------------------------------------------------------------- pooling / norms


def global_pool(kind: str, x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if kind == "avg":
        area = h * w
        return _node(
            x.data.mean(axis=(2, 3), keepdims=True),
            [(x, lambda g: np.broadcast_to(g / area, x.shape).copy())],
        )
    if kind == "max":
        flat = x.data.reshape(n, c, h * w)
        idx = flat.argmax(axis=2)  # first maximum in row-major order
        note_branch(idx)
        out = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)

        def fn(g):
            full = np.zeros((n, c, h * w))
            np.put_along_axis(full, idx[..., None], g.reshape(n, c, 1), axis=2)
            return full.reshape(n, c, h, w)

        return _node(out, [(x, fn)])
    raise ValueError(f"unknown pool kind {kind!r}")


def channel_l2_normalize(x: Tensor, eps: float = 1e-6) -> Tensor:
    """x / (||x||_channels + eps) at every spatial position."""
    r = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    denom = r + eps
    y = x.data / denom

    def fn(g):
        dot = (g * x.data).sum(axis=1, keepdims=True)
        safe_r = np.where(r > 0, r, 1.0)
        corr = np.where(r > 0, dot / (denom * denom * safe_r), 0.0)
        return g / denom - x.data * corr

    return _node(y, [(x, fn)])
