"""Experiment configuration: one INI section, flat keys, command-line overrides.

A config file looks like::

    [experiment]
    order = 16
    snr_db = 14, 17, 20
    detectors = qrmnet, qrm, ep

Unknown keys are rejected. Tuple-valued keys take comma-separated lists.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from ..channel import ChannelProfile
from ..grid import ConfigError, GridConfig, build_grid
from ..numerics import UnsupportedConstellationError, pam_levels

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "DETECTORS",
    "ESTIMATORS",
    "load_config",
    "apply_overrides",
    "dump_config",
    "config_hash",
    "dataset_hash",
    "model_hash",
]

SECTION = "experiment"
DETECTORS = ("qrmnet", "qrm", "ep", "ep-gnn", "ml", "ml-raw")
ESTIMATORS = ("perfect", "interp", "lmmse", "srcnn")


@dataclass(frozen=True)
class ExperimentConfig:
    # grid
    n_subcarriers: int = 48
    n_symbols: int = 14
    n_pilots: int = 32
    n_data: int = 480
    pilot_seed: int = 7
    # link
    n_rx: int = 2
    n_tx: int = 2
    order: int = 16
    # channel
    n_taps: int = 4
    decay_db: float = 3.0
    tap_spacing: int = 1
    fft_size: int = 64
    alpha: float = 0.3
    beta: float = 0.3
    # receiver
    detectors: tuple = ("qrmnet", "qrm", "ep")
    estimators: tuple = ("perfect",)
    K: int = 16
    T: int = 2
    L: int = 10
    max_log: bool = False
    ep_iterations: int = 10
    ep_damping: float = 0.9
    interp_sf: float = 4.0
    interp_st: float = 4.0
    # evaluation
    snr_db: tuple = (14.0, 17.0, 20.0)
    seed: int = 0
    target_errors: int = 200
    max_re: int = 200_000
    workers: int = 1
    timing: bool = False
    # networks
    n_u: int = 8
    n_h1: int = 64
    n_h2: int = 32
    n_h3: int = 64
    prior_feature: str = "moments"
    dropout: float = 0.3
    srcnn_residual: bool = False
    # training
    train_snr_db: tuple = (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)
    n_ttis: int = 50
    ce_epochs: int = 20
    ce_lr: float = 1e-3
    ce_batch_ttis: int = 1
    det_epochs: int = 20
    det_lr: float = 1e-3
    det_batch: int = 480

    def __post_init__(self):
        self.validate()

    # -------------------------------------------------------------- derived

    def grid_config(self) -> GridConfig:
        return GridConfig(self.n_subcarriers, self.n_symbols, self.n_pilots, self.n_data,
                          self.n_tx, None, self.pilot_seed)

    def channel_profile(self) -> ChannelProfile:
        return ChannelProfile(self.n_taps, self.decay_db, self.tap_spacing, self.fft_size,
                              self.alpha, self.beta)

    @property
    def n_pam(self) -> int:
        return len(pam_levels(self.order))

    def validate(self) -> None:
        try:
            pam_levels(self.order)
            self.channel_profile()
            build_grid(self.grid_config())
        except (UnsupportedConstellationError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        bad = [d for d in self.detectors if d not in DETECTORS]
        if bad:
            raise ConfigError(f"unknown detectors {bad}; choose from {DETECTORS}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
        if self.prior_feature not in ("moments", "distribution"):
            raise ConfigError("prior_feature must be moments or distribution")
        for name in ("K", "T", "L", "n_rx", "n_tx", "n_u", "n_h1", "n_h2", "n_h3",
                     "target_errors", "max_re", "workers", "n_ttis", "ce_batch_ttis", "det_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 < self.ep_damping <= 1.0:
            raise ConfigError("ep_damping must lie in (0, 1]")
        if not self.snr_db:
            raise ConfigError("snr_db must list at least one point")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


# ------------------------------------------------------------------ parsing

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig()


def _parse_value(name: str, text: str):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    default = getattr(_DEFAULTS, name)
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(t) for t in items)
            return tuple(items)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read an INI file (optional) and apply ``key=value`` overrides."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not parser.has_section(SECTION):
            raise ConfigError(f"{path}: missing [{SECTION}] section")
        for key, text in parser.items(SECTION):
            values[key] = _parse_value(key, text)
    cfg = ExperimentConfig(**values)
    return apply_overrides(cfg, overrides)


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    changes = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        changes[key.strip()] = _parse_value(key.strip(), text)
    return cfg.replace(**changes) if changes else cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that :func:`load_config` reads back to an equal config."""
    lines = [f"[{SECTION}]"]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ hashes

def _hash(cfg: ExperimentConfig, keys) -> str:
    payload = json.dumps({k: getattr(cfg, k) for k in sorted(keys)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def config_hash(cfg: ExperimentConfig) -> str:
    return _hash(cfg, _FIELDS)


_DATA_KEYS = ("n_subcarriers", "n_symbols", "n_pilots", "n_data", "pilot_seed", "n_rx",
              "n_tx", "order", "n_taps", "decay_db", "tap_spacing", "fft_size", "alpha", "beta")


def dataset_hash(cfg: ExperimentConfig) -> str:
    """Hash of the settings that shape generated TTIs."""
    return _hash(cfg, _DATA_KEYS)


def model_hash(cfg: ExperimentConfig, kind: str) -> str:
    """Hash of the settings a weight file of ``kind`` ('ce' or 'det') depends on."""
    if kind == "ce":
        keys = ("n_subcarriers", "n_symbols", "n_h1", "n_h2", "srcnn_residual")
    elif kind == "det":
        keys = ("order", "n_u", "n_h1", "n_h2", "n_h3", "prior_feature")
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return f"{kind}:" + _hash(cfg, keys)
