"""INI configuration files mapping one-to-one onto ExperimentConfig.

Sections mirror the sub-config dataclasses; keys carry their units in the
name. Unknown sections or keys are rejected rather than ignored, so typos
fail loudly instead of silently running defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
from importlib import resources
from pathlib import Path
from typing import get_type_hints

from .protocol import (
    AliceConfig,
    AnalysisConfig,
    BobConfig,
    ChannelConfig,
    DetectorConfig,
    ExperimentConfig,
    RunConfig,
    SourceConfig,
)


class ConfigError(ValueError):
    """Unknown key/section, unparsable value, or out-of-range setting."""


_SECTION_TYPES = {
    "source": SourceConfig,
    "alice": AliceConfig,
    "channel": ChannelConfig,
    "bob": BobConfig,
    "detectors": DetectorConfig,
    "analysis": AnalysisConfig,
    "run": RunConfig,
}

_HINTS = {name: get_type_hints(cls) for name, cls in _SECTION_TYPES.items()}


def _parse_value(raw: str, hint, where: str):
    raw = raw.strip()
    if hint == (float | None) or hint == (str | None):
        if raw == "" or raw.lower() == "none":
            return None
        hint = float if hint == (float | None) else str
    try:
        if hint is float:
            return float(raw)
        if hint is int:
            return int(raw)
        if hint is str:
            return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc
    raise ConfigError(f"{where}: unsupported option type {hint!r}")


def _from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    parts = {}
    for section in parser.sections():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown section [{section}]")
        cls = _SECTION_TYPES[section]
        hints = _HINTS[section]
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in parser[section].items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kwargs[key] = _parse_value(raw, hints[key], f"[{section}] {key}")
        parts[section] = cls(**kwargs)
    config = ExperimentConfig(**parts)
    validate(config)
    return config


def validate(config: ExperimentConfig) -> None:
    """Range checks beyond what the component specs enforce at run time."""
    checks = [
        (config.source.crystal_length_mm > 0, "crystal length must be positive"),
        (config.source.poling_period_um > 0, "poling period must be positive"),
        (config.source.pump_power_mw > 0, "pump power must be positive"),
        (config.source.anchor_pair_rate_mhz > 0, "anchor rate must be positive"),
        (0 < config.alice.bit0_fraction < 1,
         "bit0_fraction must be strictly between 0 and 1"),
        (0 < config.alice.herald_efficiency <= 1,
         "herald_efficiency must be in (0, 1]"),
        (0 < config.alice.signal_efficiency <= 1,
         "signal_efficiency must be in (0, 1]"),
        (config.alice.delay_ns > 0, "encoding delay must be positive"),
        (0 <= config.channel.loss < 1, "channel loss must be in [0, 1)"),
        (0 < config.bob.splitter_fraction < 1,
         "splitter_fraction must be strictly between 0 and 1"),
        (0 < config.bob.collection_efficiency <= 1,
         "collection_efficiency must be in (0, 1]"),
        (config.bob.background_floor_cps_per_ns >= 0,
         "background floor must be non-negative"),
        (0 < config.detectors.herald_qe <= 1, "herald_qe must be in (0, 1]"),
        (0 < config.detectors.bob_qe <= 1, "bob_qe must be in (0, 1]"),
        (config.detectors.dead_time_ns >= 0, "dead time must be non-negative"),
        (config.detectors.pbs_extinction > 1, "pbs_extinction must exceed 1"),
        (config.analysis.bin_width_ps >= 1, "bin width must be at least 1 ps"),
        (config.analysis.range_stop_ns > config.analysis.range_start_ns,
         "analysis range must be a non-empty interval"),
        (0 < config.analysis.qber_threshold_pct < 100,
         "qber_threshold_pct must be in (0, 100)"),
        (config.analysis.symmetry_tol_pp > 0, "symmetry tolerance must be positive"),
        (config.run.duration_s > 0, "duration must be positive"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


def load_config(path) -> ExperimentConfig:
    """Read a configuration file; missing keys fall back to defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return _from_parser(parser)


def packaged_config(name: str) -> ExperimentConfig:
    """Load one of the configurations shipped with the package."""
    ref = resources.files("b92sim").joinpath(f"data/{name}.ini")
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"no packaged configuration named {name!r}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string(text)
    return _from_parser(parser)


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(config: ExperimentConfig, path) -> None:
    """Write every section and key; the file round-trips to an equal config."""
    lines = []
    for section, cls in _SECTION_TYPES.items():
        sub = getattr(config, section)
        lines.append(f"[{section}]")
        for f in dataclasses.fields(cls):
            lines.append(f"{f.name} = {_format_value(getattr(sub, f.name))}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def config_as_dict(config: ExperimentConfig) -> dict:
    """Nested plain-value dict of the full configuration (JSON friendly)."""
    return dataclasses.asdict(config)
