"""Experiment configuration files.

One INI file with sections ``[noise]``, ``[potential]``, ``[train]`` and
``[generate]``; each key is a field of the matching dataclass.  Unknown
sections or keys are errors.  Values are written back in a canonical form,
so parse-then-serialize is idempotent::

    [noise]
    d_max = 0.8
    gamma_max = 0.1

    [generate]
    composition = C
    molar_volume_range = 3.8 5.6
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .elements import format_formula, parse_formula
from .noise import NoiseSpec
from .potential.params import ConfigurationError, Hyper
from .rss import GenSpec
from .trainer import TrainConfig


@dataclass(frozen=True)
class GenerateRun:
    """Generation settings that are not part of :class:`GenSpec`."""

    n_samples: int = 50
    workers: int = 1

    def __post_init__(self):
        if self.n_samples < 1 or self.workers < 1:
            raise ValueError("n_samples and workers must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    potential: Hyper = field(default_factory=Hyper)
    train: TrainConfig = field(default_factory=TrainConfig)
    generate: GenSpec = field(default_factory=GenSpec)
    run: GenerateRun = field(default_factory=GenerateRun)


# section name -> (RunConfig attribute, dataclass types sharing the section)
SECTIONS = {
    "noise": (("noise", NoiseSpec),),
    "potential": (("potential", Hyper),),
    "train": (("train", TrainConfig),),
    "generate": (("generate", GenSpec), ("run", GenerateRun)),
}


def _parse_value(text: str, hint, key: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)) and type(None) in args:
        if text.lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)]
        return _parse_value(text, inner[0], key)
    if hint is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {text!r}")
    if hint is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigurationError(f"{key}: expected an integer, got {text!r}") from None
    if hint is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigurationError(f"{key}: expected a number, got {text!r}") from None
    if origin is tuple:
        parts = text.replace(",", " ").split()
        if len(parts) != len(args):
            raise ConfigurationError(f"{key}: expected {len(args)} values, got {text!r}")
        return tuple(_parse_value(p, a, key) for p, a in zip(parts, args))
    if hint is dict or origin is dict:
        try:
            return parse_formula(text)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: {exc}") from None
    raise ConfigurationError(f"{key}: unsupported field type {hint!r}")


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(_format_value(v) for v in value)
    if isinstance(value, dict):
        return format_formula(value)
    return str(value)


def _hints(cls):
    return typing.get_type_hints(cls)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    built = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"{source}: unknown section [{section}]; expected one of {sorted(SECTIONS)}")
        owners = SECTIONS[section]
        values = {attr: {} for attr, _ in owners}
        for key, raw in cp.items(section):
            for attr, cls in owners:
                hints = _hints(cls)
                if key in hints and key in {f.name for f in dataclasses.fields(cls)}:
                    values[attr][key] = _parse_value(raw, hints[key], f"[{section}] {key}")
                    break
            else:
                raise ConfigurationError(f"{source}: unknown key {key!r} in [{section}]")
        for attr, cls in owners:
            try:
                built[attr] = cls(**values[attr])
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"{source}: [{section}] {exc}") from None
    return RunConfig(**built)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    return parse_config(text, str(path))


def serialize_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    for section, owners in SECTIONS.items():
        cp.add_section(section)
        for attr, cls in owners:
            obj = getattr(cfg, attr)
            for f in dataclasses.fields(cls):
                cp.set(section, f.name, _format_value(getattr(obj, f.name)))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def override(cfg: RunConfig, section: str, **changes) -> RunConfig:
    """Return ``cfg`` with fields in ``section`` replaced (None values skipped)."""
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return cfg
    obj = getattr(cfg, section)
    try:
        new = dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None
    return dataclasses.replace(cfg, **{section: new})
