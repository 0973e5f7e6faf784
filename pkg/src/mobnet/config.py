"""TOML experiment configuration.

Sections: [mobility] with the row-major rate matrix, [ladder] with the
heavy-traffic sequence, [experiment] with grids/replications/thresholds, and
[rng] with the root seed.  Missing keys raise ConfigError naming the key.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .experiments import HeavyTrafficLadder, build_ladder
from .mobility import MobilityProfile, validate_generator
from .network import NetworkParams, network_params


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {p}: {exc}") from exc


def require(cfg: dict, section: str, key: str):
    if section not in cfg:
        raise ConfigError(f"missing [{section}] section")
    if key not in cfg[section]:
        raise ConfigError(f"missing key '{key}' in [{section}]")
    return cfg[section][key]


def get(cfg: dict, section: str, key: str, default):
    return cfg.get(section, {}).get(key, default)


def mobility_from_config(cfg: dict) -> MobilityProfile:
    Q = np.asarray(require(cfg, "mobility", "Q"), dtype=float)
    return validate_generator(Q)


def ladder_from_config(cfg: dict, profile: MobilityProfile) -> HeavyTrafficLadder:
    lam = float(require(cfg, "ladder", "lambda"))
    alpha = float(require(cfg, "ladder", "alpha"))
    n_values = require(cfg, "ladder", "n_values")
    arrival_w = get(cfg, "ladder", "arrival_weights", None)
    capacity_w = get(cfg, "ladder", "capacity_weights", None)
    return build_ladder(profile, lam, alpha, n_values, arrival_w, capacity_w)


def params_from_config(cfg: dict, profile: MobilityProfile, section: str = "network") -> NetworkParams:
    lam_k = np.asarray(require(cfg, section, "lambda_k"), dtype=float)
    mu_k = np.asarray(require(cfg, section, "mu_k"), dtype=float)
    kappa = get(cfg, section, "kappa_bound", None)
    return network_params(profile, lam_k, mu_k, kappa)


def seed_from_config(cfg: dict, override: int | None) -> int:
    if override is not None:
        return int(override)
    return int(get(cfg, "rng", "seed", 0))
