"""Experiment configuration files.

A config file is YAML whose keys mirror ``ExperimentConfig``::

    system: partner-mas            # partner-mas | single | debate
    variant: business              # generic | business
    supervisor_mode: weight        # deterministic | importance | weight | majority
    runs_k: 1
    debate_rounds: 1
    shuffle_seed: null
    sample_seed: null
    concurrency: 4
    blueprint_cap: 10
    consensus_threshold: 0.5
    temperature: 0.0
    max_attempts: 3
    providers:                     # per role, or "default" for every role
      default: {kind: scripted, fixtures: fixtures.json}
      supervisor: {kind: http, name: openai, model: gpt-4o-mini}

Precedence, lowest to highest: built-in defaults, the config file,
``--set key=value`` overrides, dedicated command-line flags.
Credentials never belong here; they are read from ``PMAS_API_KEY_<PROVIDER>``
and ``PMAS_ENDPOINT_<PROVIDER>``.
"""

from __future__ import annotations

import dataclasses
import re
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from partnermas.bench import ConfigError, ExperimentConfig

SECRET_KEY = re.compile(
    r"(?i)^(?:.*[_-])?(?:api[_-]?key|secret|password|passwd|access[_-]?token|auth[_-]?token|bearer|authorization|credentials?)$"
)
FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _check_secrets(data: Any, prefix: str = "") -> None:
    if isinstance(data, Mapping):
        for key, value in data.items():
            path = f"{prefix}{key}"
            if SECRET_KEY.match(str(key)):
                raise ConfigError(path, "credentials must come from PMAS_API_KEY_<PROVIDER>, not config files")
            _check_secrets(value, path + ".")


def parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, _, raw = item.partition("=")
    key = key.strip()
    if not key or any(not part for part in key.split(".")):
        raise ConfigError(key or item, "empty key in override")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}: {exc}") from None
    return key.split("."), value


def set_dotted(data: dict[str, Any], path: Sequence[str], value: Any) -> None:
    node = data
    for i, part in enumerate(path[:-1]):
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(".".join(path[: i + 1]), "is not a mapping; cannot set a sub-key")
        node = child
    node[path[-1]] = value


def read_config_file(path: str | Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config file: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return data


def _anchor_fixture_paths(data: dict[str, Any], base: Path) -> None:
    """Relative fixture paths in a config file are relative to that file."""
    providers = data.get("providers")
    if not isinstance(providers, dict):
        return
    for binding in providers.values():
        if isinstance(binding, dict) and isinstance(binding.get("fixtures"), str):
            fixtures = Path(binding["fixtures"])
            if not fixtures.is_absolute():
                binding["fixtures"] = str(base / fixtures)


def build_config(
    path: str | Path | None = None,
    overrides: Sequence[str] = (),
    flags: Mapping[str, Any] | None = None,
) -> ExperimentConfig:
    """Merge the layers and validate; every problem surfaces as ``ConfigError``."""
    data = read_config_file(path) if path else {}
    if path:
        _anchor_fixture_paths(data, Path(path).parent)
    for item in overrides:
        keys, value = parse_override(item)
        set_dotted(data, keys, value)
    for key, value in (flags or {}).items():
        if value is not None:
            set_dotted(data, key.split("."), value)
    _check_secrets(data)
    for key in data:
        if key not in FIELDS:
            raise ConfigError(str(key), f"unknown setting; expected one of {', '.join(sorted(FIELDS))}")
    if "providers" in data and not isinstance(data["providers"], dict):
        raise ConfigError("providers", "must be a mapping of role to provider binding")
    try:
        return ExperimentConfig(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("config", str(exc)) from None


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
