"""Ablation arms: each axis is a list of labelled config overrides."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass

from .config import RunConfig
from .errors import ConfigError
from .train import evaluate, train

BASELINE = {"connector": "fpn", "isg": False}
ISG_ONLY = {"connector": "fpn", "isg": True}
CSG_ONLY = {"connector": "dsic", "isg": False}

AXES: dict[str, list[tuple[str, dict]]] = {
    "component": [
        ("baseline", BASELINE),
        ("baseline+ISG", ISG_ONLY),
        ("baseline+CSG", CSG_ONLY),
        ("baseline+ISG+CSG", {"connector": "dsic", "isg": True}),
    ],
    "stride": [
        ("baseline", BASELINE),
        ("1", {**ISG_ONLY, "sampling_stride": 1}),
        ("2", {**ISG_ONLY, "sampling_stride": 2}),
    ],
    "fs": [
        ("baseline", BASELINE),
        ("ISG w/o FS", {**ISG_ONLY, "fs_enabled": False}),
        ("ISG w FS", {**ISG_ONLY, "fs_enabled": True}),
    ],
    "csg_placement": [
        ("baseline", BASELINE),
        ("After FPN", {"connector": "dsic_after_fpn", "isg": False}),
        ("Inside FPN", {"connector": "dsic_inside_fpn", "isg": False}),
        ("CSG", CSG_ONLY),
    ],
    "mode": [
        ("ISG/Softmax", {**ISG_ONLY, "isg_mode": "softmax_group"}),
        ("ISG/Sigmoid", {**ISG_ONLY, "isg_mode": "sigmoid"}),
        ("ISG/Tanh", {**ISG_ONLY, "isg_mode": "rectified_tanh"}),
        ("CSG/Softmax", {**CSG_ONLY, "csg_mode": "softmax_group"}),
        ("CSG/Sigmoid", {**CSG_ONLY, "csg_mode": "sigmoid"}),
        ("CSG/Tanh", {**CSG_ONLY, "csg_mode": "rectified_tanh"}),
    ],
}


@dataclass
class ArmResult:
    label: str
    overrides: dict
    mse: dict[int, float]
    f1: dict[int, float]

    @property
    def median_mse(self) -> float:
        return statistics.median(self.mse.values())

    @property
    def median_f1(self) -> float:
        return statistics.median(self.f1.values())


def arms(axis: str) -> list[tuple[str, dict]]:
    try:
        return AXES[axis]
    except KeyError:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}") from None


def run_arm(cfg: RunConfig, label: str, overrides: dict) -> ArmResult:
    mse, f1 = {}, {}
    for seed in cfg.seeds:
        arm_cfg = cfg.replace(**overrides, seed=seed)
        metrics = evaluate(train(arm_cfg))
        mse[seed], f1[seed] = metrics["mse"], metrics["f1"]
    return ArmResult(label, overrides, mse, f1)


def ablate(cfg: RunConfig, axis: str, progress=None) -> list[ArmResult]:
    results = []
    for label, overrides in arms(axis):
        results.append(run_arm(cfg, label, overrides))
        if progress is not None:
            progress(results[-1])
    return results


def table_rows(results: list[ArmResult], seeds) -> tuple[list[str], list[list[str]]]:
    header = ["arm", "connector", "isg"] + [f"mse_seed{s}" for s in seeds]
    header += ["median_mse", "median_f1", "beats_baseline"]
    base = next((r for r in results if r.label == "baseline"), None)
    rows = []
    for r in results:
        beats = "" if base is None or r is base else str(r.median_mse <= base.median_mse).lower()
        rows.append(
            [r.label, str(r.overrides.get("connector", "")), str(r.overrides.get("isg", "")).lower()]
            + [f"{r.mse[s]:.6g}" for s in seeds]
            + [f"{r.median_mse:.6g}", f"{r.median_f1:.4f}", beats]
        )
    return header, rows


def to_csv(results: list[ArmResult], seeds) -> str:
    header, rows = table_rows(results, seeds)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def to_text(results: list[ArmResult], seeds) -> str:
    header, rows = table_rows(results, seeds)
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)
