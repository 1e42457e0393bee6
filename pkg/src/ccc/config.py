"""Run configuration: one JSON file with per-module sections plus dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .bench import ARMS, BenchConfig, ConfigError, ModelConfig
from .condense import CondenseConfig
from .replay import ReplayConfig


@dataclass(frozen=True)
class RunSection:
    arms: tuple[str, ...] = ("ccc", "finetune")
    output_dir: str = "results"
    run_id: str | None = None
    seed: int = 0  # train/eval split seed

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        if not self.arms:
            raise ConfigError("run.arms", "at least one arm is required")
        for a in self.arms:
            if a not in ARMS:
                raise ConfigError("run.arms", f"unknown arm {a!r} (expected one of {', '.join(ARMS)})")


SECTIONS = {
    "bench": BenchConfig,
    "condense": CondenseConfig,
    "model": ModelConfig,
    "replay": ReplayConfig,
    "run": RunSection,
}


@dataclass(frozen=True)
class RunConfig:
    bench: BenchConfig = field(default_factory=BenchConfig)
    condense: CondenseConfig = field(default_factory=CondenseConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self) -> dict:
        return {name: _jsonable(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    where = f"{section}.{key}"
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(where, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) or (default is None and key in {"budget"}):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(where, f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(where, f"expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str) or default is None:
        if not isinstance(value, str):
            raise ConfigError(where, f"expected a string, got {value!r}")
        return value
    return value


def build_section(name: str, values: dict) -> Any:
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(name, "section must be a JSON object")
    defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
    unknown = set(values) - set(defaults)
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    kwargs = {k: _coerce(name, k, v, defaults[k]) for k, v in values.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


def parse_override(text: str) -> tuple[list[str], Any]:
    """``section.key=value``; the value is read as JSON when possible."""
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=value")
    path, raw = text.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(path, "override path must be section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(str(path), "config must be a JSON object")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config section")
    merged = {name: dict(raw.get(name, {})) for name in SECTIONS}
    for text in overrides:
        (section, key), value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(section, "unknown config section")
        merged[section][key] = value
    return RunConfig(**{name: build_section(name, merged[name]) for name in SECTIONS})
