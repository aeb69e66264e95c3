"""Training loop, evaluation metrics and the data streams feeding them."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .model import ModelParams, heatmap_loss, init_model, model_forward, named_tensors
from .records import GateRecord, split_records
from .synth import LEVELS, SynthSample, generate_sample
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)

# validation seeds live far above anything the training stream can draw
TRAIN_SEED_LIMIT = 1_000_000_000
VAL_SEED_BASE = 2_000_000_000


def val_seeds(n: int) -> list[int]:
    return [VAL_SEED_BASE + i for i in range(n)]


def stack_batch(samples: list[SynthSample]) -> tuple[Tensor, list[Tensor]]:
    images = Tensor(np.concatenate([s.image.data for s in samples]))
    targets = [Tensor(np.concatenate([s.targets[k].data for s in samples])) for k in range(len(LEVELS))]
    return images, targets


def lr_at(cfg: RunConfig, step: int) -> float:
    passed = sum(step >= int(round(frac * cfg.steps)) for frac in cfg.lr_milestones)
    return cfg.lr * cfg.lr_gamma**passed


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params: list[Tensor], momentum: float, weight_decay: float):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros(p.shape) for p in params]

    def step(self, grads: dict[int, np.ndarray], lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            g = grads.get(p.id)
            g = p.data * self.weight_decay if g is None else g + p.data * self.weight_decay
            v *= self.momentum
            v += g
            p.data = p.data - lr * v


@dataclass
class TrainState:
    params: ModelParams
    cfg: RunConfig
    optimizer: SGD
    step: int = 0
    loss_history: list[tuple[int, float, float]] = field(default_factory=list)  # (step, loss, lr)
    gate_log: list[GateRecord] = field(default_factory=list)


def _loss_and_grads(params: ModelParams, cfg: RunConfig, samples: list[SynthSample], want_grads: bool):
    images, targets = stack_batch(samples)
    if not want_grads:
        preds, recs = model_forward(images, params, cfg)
        return heatmap_loss(preds, targets).data.item(), None, recs
    with Tape() as tape:
        preds, recs = model_forward(images, params, cfg)
        loss = heatmap_loss(preds, targets)
    return loss.data.item(), backward(tape, loss), recs


def _batch_step(state: TrainState, samples: list[SynthSample], want_grads: bool):
    """Loss (mean over the batch), merged gradients and gate records."""
    cfg = state.cfg
    workers = min(cfg.workers, len(samples))
    if workers == 1:
        return _loss_and_grads(state.params, cfg, samples, want_grads)
    chunks = [list(c) for c in np.array_split(np.array(samples, dtype=object), workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: _loss_and_grads(state.params, cfg, c, want_grads), chunks))
    total = len(samples)
    loss = sum(len(c) / total * p[0] for c, p in zip(chunks, parts))
    grads = None
    if want_grads:
        grads = {}
        for c, (_, g, _) in zip(chunks, parts):
            w = len(c) / total
            for key, val in g.items():
                grads[key] = grads[key] + w * val if key in grads else w * val
    recs = [p[2] for p in parts]
    return loss, grads, _merge_records(recs)


def _merge_records(parts):
    from .csg import CSGRecord
    from .isg import ISGRecord
    from .model import GateRecords

    first = parts[0]
    isg = csg = None
    if first.isg is not None:
        stages = len(first.isg.b)
        isg = ISGRecord(
            [np.concatenate([p.isg.b[s] for p in parts]) for s in range(stages)],
            first.isg.b_blocks,
            [
                None if first.isg.a[s] is None else np.concatenate([p.isg.a[s] for p in parts])
                for s in range(stages)
            ],
        )
    if first.csg is not None:
        csg = CSGRecord(np.concatenate([p.csg.w for p in parts]))
    return GateRecords(isg, csg)


def train(cfg: RunConfig, params: ModelParams | None = None) -> TrainState:
    """Run ``cfg.steps`` SGD updates; the loss is also measured after the last one.

    Step ``s`` draws a fresh batch, logs its loss every ``log_every`` steps and
    its gate states every ``gate_every`` steps, then updates the parameters
    (except at ``s == steps``, which only measures).
    """
    cfg.validate()
    if params is None:
        params = init_model(cfg)
    trainable = [t for _, t in named_tensors(params)]
    state = TrainState(params, cfg, SGD(trainable, cfg.momentum, cfg.weight_decay))
    data_rng = np.random.default_rng([cfg.seed, 1])
    for step in range(cfg.steps + 1):
        seeds = data_rng.integers(0, TRAIN_SEED_LIMIT, size=cfg.batch_size)
        samples = [
            generate_sample(int(s), tuple(cfg.blob_count), size=cfg.image_size) for s in seeds
        ]
        updating = step < cfg.steps
        loss, grads, recs = _batch_step(state, samples, want_grads=updating)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        lr = lr_at(cfg, step)
        if step % cfg.log_every == 0 or step == cfg.steps:
            state.loss_history.append((step, loss, lr))
            log.debug("step %d loss %.6f lr %g", step, loss, lr)
        if step % cfg.gate_every == 0 and (recs.isg is not None or recs.csg is not None):
            state.gate_log.extend(split_records(recs, [int(s) for s in seeds]))
        if updating:
            state.optimizer.step(grads, lr)
            state.step = step + 1
    return state


def predict(params: ModelParams, cfg: RunConfig, samples: list[SynthSample], batch: int = 25):
    """Per-sample lists of per-level prediction arrays ``(h_k, w_k)`` plus gate records."""
    preds_out, recs_out = [], []
    for lo in range(0, len(samples), batch):
        chunk = samples[lo : lo + batch]
        images, _ = stack_batch(chunk)
        preds, recs = model_forward(images, params, cfg)
        for n in range(len(chunk)):
            preds_out.append([p.data[n, 0] for p in preds])
        recs_out.extend(split_records(recs, [s.seed for s in chunk]))
    return preds_out, recs_out


# ---------------------------------------------------------------- metrics


def local_peaks(heat: np.ndarray, threshold: float = 0.5) -> list[tuple[int, int]]:
    """(col, row) cells above ``threshold`` that are maximal in their 3x3 window."""
    padded = np.pad(heat, 1, constant_values=-np.inf)
    h, w = heat.shape
    neigh = np.max(
        np.stack([padded[dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)]), axis=0
    )
    ys, xs = np.nonzero((heat > threshold) & (heat >= neigh))
    return list(zip(xs.tolist(), ys.tolist()))


def match_peaks(peaks, centers, radius: float = 1.5) -> int:
    """Greedy nearest-first one-to-one matching; returns the number of matches."""
    pairs = sorted(
        (np.hypot(px - cx, py - cy), a, b)
        for a, (px, py) in enumerate(peaks)
        for b, (cx, cy) in enumerate(centers)
    )
    used_p, used_c, hits = set(), set(), 0
    for dist, a, b in pairs:
        if dist > radius:
            break
        if a in used_p or b in used_c:
            continue
        used_p.add(a)
        used_c.add(b)
        hits += 1
    return hits


def score_predictions(preds: list[list[np.ndarray]], samples: list[SynthSample]) -> dict:
    """Per-level MSE, overall MSE and center-detection precision/recall/F1."""
    sq = np.zeros(len(LEVELS))
    tp = fp = fn = 0
    for pred, sample in zip(preds, samples):
        for k, lvl in enumerate(LEVELS):
            target = sample.targets[k].data[0, 0]
            sq[k] += float(((pred[k] - target) ** 2).mean())
            peaks = local_peaks(pred[k])
            centers = [b.cell() for b in sample.blobs if b.level == lvl]
            hits = match_peaks(peaks, centers)
            tp += hits
            fp += len(peaks) - hits
            fn += len(centers) - hits
    per_level = sq / max(len(samples), 1)
    denom = 2 * tp + fp + fn
    return {
        "mse_per_level": {f"P{lvl}": float(v) for lvl, v in zip(LEVELS, per_level)},
        "mse": float(per_level.mean()),
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
        "f1": 2 * tp / denom if denom else 0.0,
    }


def evaluate(state_or_params, cfg: RunConfig | None = None, n_val: int | None = None) -> dict:
    if isinstance(state_or_params, TrainState):
        params, cfg = state_or_params.params, cfg or state_or_params.cfg
    else:
        params = state_or_params
    n_val = n_val or cfg.n_val
    samples = [generate_sample(s, tuple(cfg.blob_count), size=cfg.image_size) for s in val_seeds(n_val)]
    preds, _ = predict(params, cfg, samples)
    return score_predictions(preds, samples)
