"""Run configuration and its flat ``key = value`` text format.

One key per line, ``#`` starts a comment. Values are typed by the field they
set: integers, floats, booleans (``true``/``false``), strings, and
comma-separated tuples for the sequence fields.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints

from .errors import ConfigError, ConfigParseError
from .gate import PLACEMENTS, GateMode
from .pyramids import TOPOLOGIES

GATE_INITS = ("open", "closed", "zero")


@dataclass(frozen=True)
class RunConfig:
    connector: str = "dsic"
    isg: bool = True
    isg_mode: str = "rectified_tanh"
    csg_mode: str = "rectified_tanh"
    placement: str = "signal"
    sampling_stride: int = 1
    fs_enabled: bool = True
    fpn_smooth: bool = False
    gate_init: str = "open"
    calibrate: bool = True
    d: int = 32
    image_size: int = 64
    channels: tuple[int, ...] = (8, 16, 32, 64)
    blocks: tuple[int, ...] = (3, 3, 3, 3)
    blob_count: tuple[int, ...] = (1, 4)
    seed: int = 1
    seeds: tuple[int, ...] = (1, 2, 3)
    steps: int = 2000
    batch_size: int = 4
    lr: float = 0.01
    lr_milestones: tuple[float, ...] = (2 / 3, 8 / 9)
    lr_gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    head_bias: float = -2.3  # logit of the mean target value, about 0.09
    n_val: int = 100
    log_every: int = 10
    gate_every: int = 100
    workers: int = 1
    out_dir: str = "runs/default"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "RunConfig":
        if self.connector not in TOPOLOGIES:
            raise ConfigError(f"connector must be one of {TOPOLOGIES}, got {self.connector!r}")
        isg_mode = GateMode.parse(self.isg_mode)
        csg_mode = GateMode.parse(self.csg_mode)
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.placement == "outer" and GateMode.SOFTMAX_GROUP in (isg_mode, csg_mode):
            raise ConfigError("outer placement cannot be combined with softmax_group mode")
        if self.sampling_stride not in (1, 2):
            raise ConfigError("sampling_stride must be 1 or 2")
        if self.gate_init not in GATE_INITS:
            raise ConfigError(f"gate_init must be one of {GATE_INITS}")
        if len(self.channels) != 4 or len(self.blocks) != 4:
            raise ConfigError("channels and blocks need exactly 4 entries (stages 2..5)")
        if any(not 1 <= b <= 4 for b in self.blocks):
            raise ConfigError("blocks per stage must be in 1..4")
        if any(c < 1 for c in self.channels) or self.d < 1:
            raise ConfigError("channel widths must be positive")
        size = self.image_size
        if size < 32 or size & (size - 1):
            raise ConfigError("image_size must be a power of two >= 32")
        if len(self.blob_count) != 2 or not 1 <= self.blob_count[0] <= self.blob_count[1]:
            raise ConfigError("blob_count must be 'lo, hi' with 1 <= lo <= hi")
        if self.steps < 0 or self.batch_size < 1 or self.workers < 1:
            raise ConfigError("steps >= 0, batch_size >= 1 and workers >= 1 required")
        if self.log_every < 1 or self.gate_every < 1 or self.n_val < 1:
            raise ConfigError("log_every, gate_every and n_val must be positive")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        return self


_HINTS = get_type_hints(RunConfig)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(key: str, text: str):
    hint = _HINTS[key]
    if hint is bool:
        return _parse_bool(text)
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    # tuple[...] fields
    elem = hint.__args__[0]
    parts = [p.strip() for p in text.split(",") if p.strip()]
    return tuple(elem(p) for p in parts)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse config text; keys not mentioned keep ``base``'s (default) values."""
    known = {f.name for f in fields(RunConfig)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigParseError(f"line {lineno}: unknown key {key!r}")
        try:
            changes[key] = _parse_value(key, value)
        except (ValueError, TypeError) as exc:
            raise ConfigParseError(f"line {lineno}: bad value for {key}: {exc}") from None
    return (base or RunConfig()).replace(**changes)


def serialize_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
