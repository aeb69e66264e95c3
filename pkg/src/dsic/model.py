"""Backbone + connector + heatmap head, wired according to a RunConfig."""

from __future__ import annotations

from dataclasses import dataclass, fields, is_dataclass
from typing import Iterator

import numpy as np

from .backbone import BackboneParams, backbone_forward, calibrate_backbone, init_backbone
from .config import RunConfig
from .csg import CSGParams, CSGRecord, csg_forward, init_csg_params, init_down_paths
from .gate import GateMode
from .isg import CoarseParams, ISGRecord, StageBlocks, init_coarse_params, isg_forward
from .nn import ConvParams, conv2d, f_up, init_conv
from .pyramids import FPNParams, fc_fpn_forward, fpn_forward, init_fpn_params
from .synth import generate_sample
from .tensor import Tensor, add, mse, scale, sigmoid, sum_tensors


CALIBRATION_BATCH = 8


@dataclass
class ModelParams:
    backbone: BackboneParams
    isg: list[CoarseParams | None] | None
    fpn: FPNParams | None
    csg: CSGParams | None
    fc_down: dict | None
    head: ConvParams


@dataclass
class GateRecords:
    isg: ISGRecord | None
    csg: CSGRecord | None


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk nested dataclasses, lists and dicts, yielding (dotted name, tensor)."""
    if obj is None:
        return
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif is_dataclass(obj):
        for f in fields(obj):
            yield from named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, dict):
        for key in sorted(obj):
            name = "_".join(str(k) for k in key) if isinstance(key, tuple) else str(key)
            yield from named_tensors(obj[key], f"{prefix}.{name}")
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}")


def _n_former(blocks: int, stride: int) -> int:
    return len(range(blocks - 1 - stride, -1, -stride))


def init_model(cfg: RunConfig, rng: np.random.Generator | None = None) -> ModelParams:
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng([cfg.seed, 0])
    backbone = init_backbone(rng, cfg.channels, cfg.blocks)
    if cfg.calibrate:
        seeds = np.random.default_rng([cfg.seed, 2]).integers(0, 2**31, CALIBRATION_BATCH)
        batch = [generate_sample(int(s), tuple(cfg.blob_count), size=cfg.image_size) for s in seeds]
        calibrate_backbone(backbone, np.concatenate([b.image.data for b in batch]))
    isg = None
    if cfg.isg:
        isg = [
            init_coarse_params(rng, c, _n_former(n, cfg.sampling_stride), cfg.gate_init)
            for c, n in zip(cfg.channels, cfg.blocks)
        ]
    kind = cfg.connector
    fpn = csg = fc_down = None
    if kind in ("fpn", "fc_fpn"):
        fpn = init_fpn_params(rng, list(cfg.channels), cfg.d, smooth=cfg.fpn_smooth and kind == "fpn")
    if kind == "fc_fpn":
        fc_down = init_down_paths(rng, cfg.d)
    if kind == "dsic_after_fpn":
        fpn = init_fpn_params(rng, list(cfg.channels), cfg.d, smooth=cfg.fpn_smooth)
        csg = init_csg_params(rng, [cfg.d] * 4, cfg.d, cfg.gate_init)
    elif kind in ("dsic", "dsic_inside_fpn"):
        csg = init_csg_params(rng, list(cfg.channels), cfg.d, cfg.gate_init)
    head = init_conv(rng, cfg.d, 1, kernel=1, bias=cfg.head_bias)
    return ModelParams(backbone, isg, fpn, csg, fc_down, head)


def connector_forward(
    pyramid: list[Tensor], params: ModelParams, cfg: RunConfig
) -> tuple[list[Tensor], CSGRecord | None]:
    kind = cfg.connector
    mode = GateMode.parse(cfg.csg_mode)
    if kind == "fpn":
        return fpn_forward(pyramid, params.fpn), None
    if kind == "fc_fpn":
        return fc_fpn_forward(pyramid, params.fpn.lateral, params.fc_down), None
    if kind == "dsic":
        return csg_forward(pyramid, params.csg, mode, cfg.placement)
    if kind == "dsic_after_fpn":
        return csg_forward(fpn_forward(pyramid, params.fpn), params.csg, mode, cfg.placement)
    # dsic_inside_fpn: gated outputs take the place of the laterals in a top-down pathway
    q, rec = csg_forward(pyramid, params.csg, mode, cfg.placement)
    outs = [None] * 4
    outs[3] = q[3]
    for k in (2, 1, 0):
        outs[k] = add(q[k], f_up(outs[k + 1], 1))
    return outs, rec


def model_forward(
    images: Tensor, params: ModelParams, cfg: RunConfig
) -> tuple[list[Tensor], GateRecords]:
    """Per-level heatmap predictions in (0, 1) plus the gate records of this batch."""
    stages: list[StageBlocks] = backbone_forward(images, params.backbone, cfg.sampling_stride)
    isg_rec = None
    if params.isg is not None:
        pyramid, isg_rec = isg_forward(
            stages, params.isg, GateMode.parse(cfg.isg_mode), cfg.placement, cfg.fs_enabled
        )
    else:
        pyramid = [s.last for s in stages]
    feats, csg_rec = connector_forward(pyramid, params, cfg)
    preds = [sigmoid(conv2d(f, params.head)) for f in feats]
    return preds, GateRecords(isg_rec, csg_rec)


def heatmap_loss(preds: list[Tensor], targets: list[Tensor]) -> Tensor:
    """Mean over levels of the per-level mean squared error."""
    return scale(sum_tensors([mse(p, t) for p, t in zip(preds, targets)]), 1.0 / len(preds))
