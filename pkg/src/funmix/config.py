"""Run configuration: one INI-style file with sections, strict key checking.

Unknown sections or keys are rejected so typos fail loudly; every key has a
default, and `funmix print-config` dumps the full default file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisSystem, build_basis
from .priors import PriorConfig
from .sampler import SamplerConfig

_SCHEMA: dict[str, dict[str, str]] = {
    "basis": {
        "degree": "3",
        "n_interior": "6",
        "domain_min": "6.0",
        "domain_max": "14.0",
    },
    "dims": {
        "k": "2",
        "m": "2",
    },
    "prior": {
        "nu_gamma": "3.0",
        "alpha1": "2.0",
        "beta1": "1.0",
        "alpha2": "3.0",
        "beta2": "1.0",
        "alpha0": "1.0",
        "beta0": "1.0",
        "alpha_dir": "1.0",
        "tau_rep": "1.0",
        "lambda_nu": "1.0",
        "lambda_phi": "1.0",
        "nu_ridge": "0.0",
        "eta_shape": "2.0",
        "eta_rate": "1.0",
    },
    "sampler": {
        "n_iter": "5000",
        "n_burnin": "2000",
        "thin": "1",
        "seed": "1",
        "step_z": "50.0",
        "step_pi": "50.0",
        "step_eta": "0.3",
        "step_a": "0.3",
        "adapt_window": "100",
        "target_accept": "0.3",
        "z_update_likelihood": "conditional",
    },
    "simulate": {
        "n_subjects": "40",
        "n_channels": "5",
        "n_points": "40",
        "eta": "50.0",
        "sigma2": "0.01",
        "truth_seed": "0",
    },
    "io": {
        "data": "data.csv",
        "truth": "truth.json",
        "output_dir": "out",
        "summary_points": "101",
    },
}


class ConfigError(ValueError):
    """Raised for unknown keys or malformed config values."""


@dataclass
class RunConfig:
    """Parsed configuration with typed blocks."""

    degree: int
    n_interior: int
    domain: tuple[float, float]
    K: int
    M: int
    prior: PriorConfig
    sampler: SamplerConfig
    sim_n_subjects: int
    sim_n_channels: int
    sim_n_points: int
    sim_eta: float
    sim_sigma2: float
    sim_truth_seed: int
    data_path: str
    truth_path: str
    output_dir: str
    summary_points: int

    def basis(self) -> BasisSystem:
        return build_basis(self.degree, self.n_interior, self.domain)


def default_config_text() -> str:
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def _parse_alpha_dir(raw: str) -> np.ndarray:
    try:
        vals = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"alpha_dir must be a comma-separated float list, got {raw!r}")
    if not vals:
        raise ConfigError("alpha_dir must not be empty")
    return np.asarray(vals)


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a config file; unknown keys are errors."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    merged: dict[str, dict[str, str]] = {
        sec: dict(keys) for sec, keys in _SCHEMA.items()
    }
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            merged[section][key] = value

    g = merged  # shorthand
    try:
        prior = PriorConfig(
            nu_gamma=float(g["prior"]["nu_gamma"]),
            alpha1=float(g["prior"]["alpha1"]),
            beta1=float(g["prior"]["beta1"]),
            alpha2=float(g["prior"]["alpha2"]),
            beta2=float(g["prior"]["beta2"]),
            alpha0=float(g["prior"]["alpha0"]),
            beta0=float(g["prior"]["beta0"]),
            alpha_dir=_parse_alpha_dir(g["prior"]["alpha_dir"]),
            tau_rep=float(g["prior"]["tau_rep"]),
            lambda_nu=float(g["prior"]["lambda_nu"]),
            lambda_phi=float(g["prior"]["lambda_phi"]),
            nu_ridge=float(g["prior"]["nu_ridge"]),
            eta_shape=float(g["prior"]["eta_shape"]),
            eta_rate=float(g["prior"]["eta_rate"]),
        )
        sampler = SamplerConfig(
            n_iter=int(g["sampler"]["n_iter"]),
            n_burnin=int(g["sampler"]["n_burnin"]),
            thin=int(g["sampler"]["thin"]),
            seed=int(g["sampler"]["seed"]),
            step_z=float(g["sampler"]["step_z"]),
            step_pi=float(g["sampler"]["step_pi"]),
            step_eta=float(g["sampler"]["step_eta"]),
            step_a=float(g["sampler"]["step_a"]),
            adapt_window=int(g["sampler"]["adapt_window"]),
            target_accept=float(g["sampler"]["target_accept"]),
            z_update_likelihood=g["sampler"]["z_update_likelihood"].strip(),
        )
        cfg = RunConfig(
            degree=int(g["basis"]["degree"]),
            n_interior=int(g["basis"]["n_interior"]),
            domain=(float(g["basis"]["domain_min"]), float(g["basis"]["domain_max"])),
            K=int(g["dims"]["k"]),
            M=int(g["dims"]["m"]),
            prior=prior,
            sampler=sampler,
            sim_n_subjects=int(g["simulate"]["n_subjects"]),
            sim_n_channels=int(g["simulate"]["n_channels"]),
            sim_n_points=int(g["simulate"]["n_points"]),
            sim_eta=float(g["simulate"]["eta"]),
            sim_sigma2=float(g["simulate"]["sigma2"]),
            sim_truth_seed=int(g["simulate"]["truth_seed"]),
            data_path=g["io"]["data"],
            truth_path=g["io"]["truth"],
            output_dir=g["io"]["output_dir"],
            summary_points=int(g["io"]["summary_points"]),
        )
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from exc
    if cfg.K < 1 or cfg.M < 0:
        raise ConfigError(f"need K >= 1 and M >= 0, got K={cfg.K}, M={cfg.M}")
    return cfg
