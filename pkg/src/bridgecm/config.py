"""Versioned run configuration: one YAML document, five sections.

Sections map one-to-one onto the dataclass configs of the other modules.
Environment variables prefixed BRIDGECM_ override individual keys for CI,
e.g. BRIDGECM_TRAIN__MAX_STEPS=100 or BRIDGECM_DATA__MIX__SNR_LOW=5.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .bridge import BridgeSchedule
from .data import CorpusConfig, MixSpec
from .model import ModelConfig
from .spectral import SpectralConfig
from .training import TrainConfig

SCHEMA_VERSION = 1
ENV_PREFIX = "BRIDGECM_"
_SECTIONS = ("spectral", "bridge", "model", "train", "data")


class ConfigError(ValueError):
    """Raised for unreadable or schema-invalid configuration documents."""


@dataclass
class RunConfig:
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    bridge: BridgeSchedule = field(default_factory=BridgeSchedule)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: CorpusConfig = field(default_factory=CorpusConfig)

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION}
        doc["spectral"] = asdict(self.spectral)
        doc["bridge"] = {
            "epsilon": self.bridge.epsilon,
            "t_max": self.bridge.t_max,
            "rho": self.bridge.rho,
            "n_steps": self.bridge.n_steps,
        }
        doc["model"] = asdict(self.model)
        doc["train"] = asdict(self.train)
        data = asdict(self.data)
        data["mix"]["noise_kinds"] = list(data["mix"]["noise_kinds"])
        doc["data"] = data
        return doc

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)


def default_config() -> RunConfig:
    return RunConfig()


def _apply_env_overrides(doc: dict, env: dict) -> dict:
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__")]
        if path[0] not in _SECTIONS:
            raise ConfigError(f"{key}: unknown config section {path[0]!r}")
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {part!r} is not a mapping")
        node[path[-1]] = yaml.safe_load(raw)
    return doc


def _build(doc: dict) -> RunConfig:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )
    unknown = set(doc) - set(_SECTIONS) - {"schema_version"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    sections = {name: dict(doc.get(name) or {}) for name in _SECTIONS}
    bridge_kw = sections["bridge"]
    model_kw = sections["model"]
    # the model boundary time tracks the process clock unless overridden
    model_kw.setdefault("t_min", bridge_kw.get("epsilon", 1e-3))
    model_kw.setdefault("t_max", bridge_kw.get("t_max", 0.999))
    data_kw = sections["data"]
    if "mix" in data_kw:
        mix_kw = dict(data_kw["mix"])
        if "noise_kinds" in mix_kw:
            mix_kw["noise_kinds"] = tuple(mix_kw["noise_kinds"])
        data_kw["mix"] = MixSpec(**mix_kw)

    try:
        return RunConfig(
            spectral=SpectralConfig(**sections["spectral"]),
            bridge=BridgeSchedule(**bridge_kw),
            model=ModelConfig(**model_kw),
            train=TrainConfig(**sections["train"]),
            data=CorpusConfig(**data_kw),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_config(path: str | Path, env: dict | None = None) -> RunConfig:
    """Parse, apply environment overrides, and validate a config document."""
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    doc = _apply_env_overrides(doc, dict(os.environ if env is None else env))
    return _build(doc)
