"""Slow, loop-based reference kernels that share no code with :mod:`dsic.nn`."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


def bilinear_point(plane: np.ndarray, y: float, x: float) -> float:
    """Sample a 2-D plane at fractional (y, x) with edge clamping."""
    h, w = plane.shape
    y = min(max(y, 0.0), h - 1)
    x = min(max(x, 0.0), w - 1)
    y0, x0 = int(math.floor(y)), int(math.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
    bot = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def reference_upsample(arr: np.ndarray, factor: int) -> np.ndarray:
    """Align-corners-false bilinear upsampling, one output pixel at a time."""
    n, c, h, w = arr.shape
    out = np.zeros((n, c, h * factor, w * factor))
    for a in range(n):
        for b in range(c):
            for oy in range(h * factor):
                for ox in range(w * factor):
                    sy = (oy + 0.5) / factor - 0.5
                    sx = (ox + 0.5) / factor - 0.5
                    out[a, b, oy, ox] = bilinear_point(arr[a, b], sy, sx)
    return out


def reference_f_up(x: Tensor, t: int) -> Tensor:
    arr = x.data
    for _ in range(t):
        arr = reference_upsample(arr, 2)
    return Tensor(arr)


def naive_conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = x.shape
    oc, _, kh, kw = weight.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, oc, oh, ow))
    for a in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = bias.reshape(-1)[o]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                y = i * stride + u - padding
                                xx = j * stride + v - padding
                                if 0 <= y < h and 0 <= xx < w:
                                    acc += x[a, ci, y, xx] * weight[o, ci, u, v]
                    out[a, o, i, j] = acc
    return out
