'''
@file: settings.py
@author: airside-tech

Run configuration. Every stage reads a ResolvedConfig built from

    dataclass defaults  <  YAML/JSON config file  <  command-line flags

and the resolved values are written to config.json before a run starts.

'''

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from baselines import BaselineConfig
from errors import ConfigError
from ingest import DEFAULT_BIN_HOURS, DEFAULT_CAP
from synthgen import GenConfig
from trainer import TrainConfig

logger = logging.getLogger("stc_mixhop.settings")

VERSION = "1.0.0"
MAX_JOBS_ENV = "STC_MIXHOP_MAX_JOBS"
CONFIG_FILE = "config.json"


@dataclass(frozen=True)
class IngestConfig:
    bin_hours: int = DEFAULT_BIN_HOURS
    cap: int = DEFAULT_CAP
    seed: int = 0

    def validate(self) -> "IngestConfig":
        if self.bin_hours < 1:
            raise ConfigError(f"bin_hours must be >= 1, got {self.bin_hours}")
        if self.cap < 1:
            raise ConfigError(f"cap must be >= 1, got {self.cap}")
        return self


SECTIONS = {
    "ingest": IngestConfig,
    "train": TrainConfig,
    "baseline": BaselineConfig,
    "gen": GenConfig,
}


@dataclass
class ResolvedConfig:
    '''
    Fully materialized settings for one command, stamped with seed and version.
    '''
    command: str
    seed: int = 0
    version: str = VERSION
    ingest: IngestConfig = field(default_factory=IngestConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, run_dir: str | Path) -> Path:
        path = Path(run_dir) / CONFIG_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.debug(f"Wrote resolved config to {path}")
        return path


def load_config_file(path: str | Path) -> dict:
    """Read a YAML or JSON settings file into a plain dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        if path.suffix.lower() == ".json":
            payload = json.load(f)
        else:
            payload = yaml.safe_load(f)
    if payload is None:
        return {}
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return payload


def _apply(section: str, current, values: dict):
    known = {f.name for f in fields(current)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown {section} settings: {sorted(unknown)}")
    return replace(current, **values)


def resolve(command: str, file_values: dict | None = None, flag_values: dict | None = None,
            options: dict | None = None) -> ResolvedConfig:
    """
    Merge settings by precedence and validate every section.

    Args:
        file_values: {"seed": ..., "<section>": {...}} from a config file
        flag_values: same shape, from command-line flags (None entries are ignored)
        options: command-specific values (paths, sweep grid) stored verbatim
    """
    layers = [file_values or {}, flag_values or {}]
    resolved = {name: cls() for name, cls in SECTIONS.items()}
    seed = 0
    for layer in layers:
        unknown = set(layer) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        if layer.get("seed") is not None:
            seed = int(layer["seed"])
        for name in SECTIONS:
            values = {k: v for k, v in (layer.get(name) or {}).items() if v is not None}
            resolved[name] = _apply(name, resolved[name], values)

    resolved = {name: replace(section, seed=seed) for name, section in resolved.items()}
    for section in resolved.values():
        section.validate()
    return ResolvedConfig(command=command, seed=seed, options=dict(options or {}), **resolved)


def max_jobs(requested: int) -> int:
    """Clamp a --jobs request to [1, $STC_MIXHOP_MAX_JOBS]."""
    jobs = max(1, int(requested))
    cap = os.environ.get(MAX_JOBS_ENV)
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"{MAX_JOBS_ENV} must be an integer, got '{cap}'") from exc
    return jobs
