"""INI run configuration: ``[model]``, ``[train]``, ``[data]``, ``[decode]``.

Keys carry the names of the corresponding config dataclass fields.  Unknown
sections or keys are rejected before anything else happens.
"""

from __future__ import annotations

import configparser
from dataclasses import MISSING, dataclass, field, fields
from typing import Any, Dict, Optional

from .data import CorpusConfig
from .decode import DecodeConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": CorpusConfig,
    "decode": DecodeConfig,
}

# keys that must be present whenever their section is used
REQUIRED = {"data": ("K", "D")}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _defaults(cls) -> Dict[str, Any]:
    out = {}
    for f in fields(cls):
        if f.default is not MISSING:
            out[f.name] = f.default
        elif f.default_factory is not MISSING:  # type: ignore[misc]
            out[f.name] = f.default_factory()  # type: ignore[misc]
    return out


def coerce(default: Any, raw: str, key: str) -> Any:
    """Parse ``raw`` into the type of ``default``."""
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_section(cls, items: Dict[str, str], section: str) -> Dict[str, Any]:
    defaults = _defaults(cls)
    out = {}
    for key, raw in items.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        out[key] = coerce(defaults[key], raw, f"{section}.{key}")
    return out


def build(cls, values: Dict[str, Any], section: str):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


@dataclass
class RunConfig:
    model: Dict[str, Any] = field(default_factory=dict)
    train: Dict[str, Any] = field(default_factory=dict)
    data: Dict[str, Any] = field(default_factory=dict)
    decode: Dict[str, Any] = field(default_factory=dict)
    present: tuple = ()

    def require(self, section: str) -> None:
        values = getattr(self, section)
        if section not in self.present:
            raise ConfigError(f"missing section [{section}]")
        for key in REQUIRED.get(section, ()):
            if key not in values:
                raise ConfigError(f"missing required key {key!r} in [{section}]")

    def corpus_config(self) -> CorpusConfig:
        self.require("data")
        return build(CorpusConfig, self.data, "data")

    def train_config(self) -> TrainConfig:
        return build(TrainConfig, self.train, "train")

    def decode_config(self) -> DecodeConfig:
        return build(DecodeConfig, self.decode, "decode")

    def model_config(self, vocab_size: Optional[int] = None, feat_dim: Optional[int] = None) -> ModelConfig:
        values = dict(self.model)
        for key, inferred in (("vocab_size", vocab_size), ("feat_dim", feat_dim)):
            if inferred is None:
                continue
            if key in values and values[key] != inferred:
                raise ConfigError(f"[model] {key}={values[key]} does not match the corpus ({inferred})")
            values[key] = inferred
        return build(ModelConfig, values, "model")


def parse_run_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str  # keys are case sensitive (K, D)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if parser.defaults():
        raise ConfigError("keys outside a section are not allowed")
    rc = RunConfig()
    present = []
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        setattr(rc, section, parse_section(SECTIONS[section], dict(parser.items(section)), section))
        present.append(section)
    rc.present = tuple(present)
    return rc


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_run_config_text(text)


def dump_section(name: str, obj) -> str:
    lines = [f"[{name}]"]
    for f in fields(obj):
        lines.append(f"{f.name} = {format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
