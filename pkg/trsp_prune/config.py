"""
Run configuration: sectioned INI files merged with command-line overrides.

The packaged ``default.ini`` is read first, then the user's file; a key in a later source
overrides the earlier one. Every key must name a field of its section's dataclass.
"""

import configparser
import logging
import os.path
import typing
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

from .core.enums import TokenizerMode
from .core.errors import ConfigError
from .data.corpus import DEFAULT_FRACTIONS
from .evaluation.benchmark import BenchConfig
from .evaluation.report import EvalConfig
from .model.config import ModelConfig
from .model.training import PretrainConfig
from .pruning.pipeline import PruneConfig
from .pruning.trsp import Stage1Config, Stage2Config

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = os.path.join(os.path.dirname(__file__), "default.ini")


@dataclass
class DataConfig:
    """
    Attributes:
        corpus: UTF-8 text file to train and evaluate on
        calibration_corpus: Optional different text file to draw calibration windows from
        tokenizer: Byte- or char-level tokenization
        fractions: Train/validation/test fractions
    """

    corpus: str = ""
    calibration_corpus: str = ""
    tokenizer: TokenizerMode = TokenizerMode.CHAR
    fractions: Tuple[float, float, float] = DEFAULT_FRACTIONS

    def __post_init__(self):
        if isinstance(self.tokenizer, str):
            self.tokenizer = TokenizerMode(self.tokenizer)
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3:
            raise ConfigError(f"data.fractions needs three values, got {self.fractions}")


@dataclass
class RunSettings:
    """
    Attributes:
        seed: Root seed every stage seed is derived from
        out: Output directory
    """

    seed: int = 0
    out: str = "runs"


SECTIONS: Dict[str, type] = {
    "run": RunSettings,
    "model": ModelConfig,
    "data": DataConfig,
    "pretrain": PretrainConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "prune": PruneConfig,
    "eval": EvalConfig,
    "bench": BenchConfig,
}


@dataclass
class RunConfig:
    """Effective configuration of one command."""

    run: RunSettings = field(default_factory=RunSettings)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    prune: PruneConfig = field(default_factory=PruneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: _section_dict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, Any]]) -> "RunConfig":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"Unknown config section(s): {sorted(unknown)}")
        return cls(**{name: _build(name, data.get(name, {})) for name in SECTIONS})


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    return value


def _section_dict(obj) -> Dict[str, Any]:
    return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if f.init}


def _coerce(dotted: str, value: Any, hint: Any) -> Any:
    """Convert an INI string or a JSON value to the field type ``hint``."""
    try:
        if isinstance(hint, type) and issubclass(hint, Enum):
            return hint(value.strip().lower() if isinstance(value, str) else value)
        if typing.get_origin(hint) is tuple:
            items = value.split(",") if isinstance(value, str) else value
            return tuple(float(x) for x in items)
        if hint is bool:
            if isinstance(value, bool):
                return value
            states = configparser.ConfigParser.BOOLEAN_STATES
            if str(value).strip().lower() not in states:
                raise ValueError(value)
            return states[str(value).strip().lower()]
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if hint is float:
            return float(value)
        return str(value).strip() if isinstance(value, str) else value
    except (TypeError, ValueError):
        raise ConfigError(f"{dotted}: cannot interpret {value!r} as {hint}") from None


def _build(section: str, values: Mapping[str, Any]):
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls) if f.init}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"Unknown config key '{section}.{key}'")
        kwargs[key] = _coerce(f"{section}.{key}", value, hints[key])
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid [{section}] settings: {e}") from e


def read_ini(paths: Sequence[Union[str, Path]]) -> Dict[str, Dict[str, str]]:
    """
    Read INI files in order; later files override earlier ones.

    Raises:
        ConfigError: If a file is missing or malformed
    """
    parser = configparser.ConfigParser(interpolation=None)
    for path in paths:
        if not os.path.isfile(path):
            raise ConfigError(f"Config file {path} does not exist")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"Cannot parse config file {path}: {e}") from e
    return {section: dict(parser.items(section)) for section in parser.sections()}


def merge_overrides(
    values: Mapping[str, Mapping[str, Any]], overrides: Mapping[str, Any]
) -> Dict[str, Dict[str, Any]]:
    """
    Apply ``section.key -> value`` overrides to raw section values; ``None`` is ignored.

    Overrides land before the dataclasses are built, so derived fields (``model.ff_dim``)
    follow the overridden values.
    """
    merged = {section: dict(items) for section, items in values.items()}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"Override '{dotted}' is not of the form section.key")
        merged.setdefault(section, {})[key] = value
    return merged


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """
    Build the effective configuration: packaged defaults, then ``path``, then ``overrides``.

    Args:
        path: Optional user INI file
        overrides: ``section.key -> value`` pairs, typically from command-line flags

    Returns:
        RunConfig: The validated configuration

    Raises:
        ConfigError: On unknown sections or keys and on values that do not fit their field
    """
    sources = [DEFAULT_CONFIG] + ([path] if path else [])
    config = RunConfig.from_dict(merge_overrides(read_ini(sources), overrides or {}))
    logger.debug("Effective config %s", config.to_dict())
    return config


def replace_section(config: RunConfig, section: str, **changes) -> RunConfig:
    return replace(config, **{section: replace(getattr(config, section), **changes)})
