"""Configuration: embedded defaults, strict TOML overlay, and run manifests.

Configs are TOML (key/value with nested tables).  Parsing is strict: a key
that does not exist in the defaults is an error, never silently ignored.
Every run writes a manifest recording the fully resolved configuration, its
hash, the seed, and the tool version, so any output can be reproduced and
audited.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__

ENV_OUTPUT_ROOT = "FORMCTL_OUT"


class ConfigError(ValueError):
    """Bad configuration: unknown key, wrong type, or unreadable file."""


DEFAULTS: Dict[str, Any] = {
    "global": {
        "seed": 0,
        "out": "runs",
        "log_level": "INFO",
        "time_scale": 1.0e-5,
        "jobs": 1,
    },
    "plant": {
        "J_diag": [1.2, 1.3, 0.9],
        "dt": 0.1,
        "torque_bias_bound": 1.0e-4,
        "q_noise_std": 1.0e-4,
        "omega_noise_std": 1.0e-5,
        "disturbances_on": True,
    },
    "distributions": {
        "q_lo": -1.0,
        "q_hi": 1.0,
        "omega0_mean": 0.0,
        "omega0_std": 0.02,
        "omegaf_mean": 0.0,
        "omegaf_std": 0.0,
        "w1_mean": 1.0,
        "w1_std": 0.1,
        "w2_lo": 300.0,
        "w2_hi": 1000.0,
        "w3_lo": 0.0,
        "w3_hi": 0.002,
    },
    "tune": {
        "method": "sa",
        "scenarios": 200,
        "sa_iterations": 2000,
        "sa_initial_temp": 0.5,
        "sa_cooling": 0.9965,
        "sa_step_scales": [0.15, 0.15, 8.0],
        "split_ratio": 0.8,
        "moga_population": 64,
        "moga_generations": 50,
    },
    "train": {
        "hidden": [64, 64],
        "learning_rate": 1.0e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "batch_size": 32,
        "epochs": 800,
    },
    "science": {
        "initial_error_deg": 30.0,
        "error_axis": [0.6, 0.48, 0.64],
        "duration": 120.0,
        "dt": 0.02,
        "torque_bias_bound": 5.0e-4,
        "q_noise_std": 2.0e-4,
        "omega_noise_std": 5.0e-5,
        "smc_gains": [2.9947, 0.0193, 0.2601],
        "pd_gains": [0.1208, 0.3786],
    },
    "relpos": {
        "duration": 9000.0,
        "dt": 0.02,
        "r_rel0_km": [1.0, 2.0, 10.0],
        "v_rel0": [1.0, 1.0, 1.0],
        "r_rel_target_km": [0.0, 0.0, 1.0],
        "accel_bias": [0.12, -0.08, -0.15],
        "accel_noise_std": 0.02,
        "meas_r_std": 5.0e-4,
        "meas_v_std": 1.0e-4,
        "store_stride": 50,
        "disturbances_on": True,
    },
    "auv": {
        "duration": 40.0,
        "dt": 5.0e-4,
        "r_leader_target": [1.0, 2.0, 3.0],
        "offset": [3.0, -1.0, 1.0],
        "current_tau": 30.0,
        "current_sigma": 0.05,
        "meas_r_std": 0.005,
        "meas_v_std": 0.002,
        "meas_q_std": 5.0e-4,
        "meas_w_std": 1.0e-3,
        "store_stride": 40,
        "disturbances_on": True,
        "use_sign_law": False,
    },
    "mission": {
        "dt": 0.02,
        "u1": 1.0,
        "u4": 0.5,
        "science_gains": [2.9947, 0.0193, 0.2601],
        "weights": [1.0, 400.0, 0.001],
        "model_path": "",
    },
}


def _merge_strict(base: Dict[str, Any], override: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    out = dict(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"expected a table at {here}")
            out[key] = _merge_strict(base[key], val, here)
        else:
            if isinstance(base[key], bool) != isinstance(val, bool):
                raise ConfigError(f"type mismatch at {here}")
            if isinstance(base[key], (int, float)) and not isinstance(val, (int, float)):
                raise ConfigError(f"expected a number at {here}")
            if isinstance(base[key], str) and not isinstance(val, str):
                raise ConfigError(f"expected a string at {here}")
            if isinstance(base[key], list) and not isinstance(val, list):
                raise ConfigError(f"expected an array at {here}")
            out[key] = val
    return out


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """Defaults overlaid with a TOML file; unknown keys are rejected."""
    if path is None:
        return json.loads(json.dumps(DEFAULTS))
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p, "rb") as fh:
            user = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return _merge_strict(DEFAULTS, user)


def config_hash(cfg: Dict[str, Any]) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()
    ).hexdigest()[:16]


def output_root(cfg: Dict[str, Any], cli_out: Optional[str] = None) -> Path:
    """Output directory resolution: flag, then environment, then config."""
    if cli_out:
        return Path(cli_out)
    env = os.environ.get(ENV_OUTPUT_ROOT)
    if env:
        return Path(env)
    return Path(cfg["global"]["out"])


@dataclass
class Manifest:
    command: str
    seed: int
    config: Dict[str, Any]

    def write(self, run_dir: Path) -> Path:
        run_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "tool": "formctl",
            "version": __version__,
            "command": self.command,
            "seed": self.seed,
            "config_hash": config_hash(self.config),
            "config": self.config,
        }
        path = run_dir / "manifest.json"
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path
