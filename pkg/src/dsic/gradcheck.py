"""Central finite-difference checks against the tape's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, record_branches


@dataclass
class GradReport:
    max_rel_err: float
    checked: int
    worst: tuple[str, tuple[int, ...], float, float] | None  # (tensor, index, analytic, numeric)
    skipped: int = 0  # coordinates whose stencil crossed a kink

    def ok(self, tol: float) -> bool:
        return self.max_rel_err <= tol


def rel_err(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    rng: np.random.Generator,
    coords_per_tensor: int = 10,
    eps: float = 1e-3,
    names: Sequence[str] | None = None,
) -> GradReport:
    """Compare analytic and central-difference gradients at random coordinates.

    ``loss_fn`` must rebuild the graph from the current contents of
    ``tensors`` each call and return a (1, 1, 1, 1) tensor. Entries are
    perturbed in place and restored afterwards.
    """
    with Tape() as tape:
        loss = loss_fn()
    grads = backward(tape, loss)

    names = list(names) if names is not None else [t.name or f"t{i}" for i, t in enumerate(tensors)]
    worst_err, worst, checked, skipped = 0.0, None, 0, 0
    with record_branches() as base:
        loss_fn()

    def evaluate():
        with record_branches() as rec:
            value = loss_fn().data.item()
        return value, rec == base

    for name, t in zip(names, tensors):
        g = grads.get(t)
        g = np.zeros(t.shape) if g is None else g
        size = t.data.size
        want = min(coords_per_tensor, size)
        done = 0
        for flat in rng.permutation(size):
            if done == want:
                break
            idx = np.unravel_index(int(flat), t.shape)
            orig = t.data[idx]
            t.data[idx] = orig + eps
            up, same_up = evaluate()
            t.data[idx] = orig - eps
            down, same_down = evaluate()
            t.data[idx] = orig
            if not (same_up and same_down):
                skipped += 1
                continue
            numeric = (up - down) / (2 * eps)
            err = rel_err(float(g[idx]), numeric)
            checked += 1
            done += 1
            if err > worst_err or worst is None:
                worst_err = max(worst_err, err)
                worst = (name, tuple(int(i) for i in idx), float(g[idx]), numeric)
    return GradReport(worst_err, checked, worst, skipped)
