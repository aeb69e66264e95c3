"""Dynamic feature pyramid gating on a small numpy autodiff core."""

from .config import RunConfig, load_config, parse_config, serialize_config
from .errors import ConfigError, ConfigParseError, ShapeMismatch
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConfigParseError",
    "RunConfig",
    "ShapeMismatch",
    "Tensor",
    "backward",
    "load_config",
    "parse_config",
    "serialize_config",
]
