"""Run configuration: flat key = value sections, strict validation, manifests.

The same format serves as input config and as the manifest emitted next to
every output: a manifest is a complete, resolved config, so feeding it back
through --config reproduces the run byte for byte.
"""

from __future__ import annotations

import configparser
import io

from . import __version__
from .dynamics import EnsembleConfig, SpinParams
from .membrane import MembraneSpec


class ConfigError(ValueError):
    """Config parse or validation failure; message names section and key."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str):
    return tuple(float(tok) for tok in text.split())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.17g" % value
    if isinstance(value, tuple):
        return " ".join("%.17g" % v for v in value)
    if value is None:
        return ""
    return str(value)


# section -> key -> (parser, default); None default means "unset".
_SCHEMA = {
    "run": {
        "seed": (int, 0),
        "subcommand": (str, None),
        "version": (str, None),
        "mode_set_hash": (str, None),
    },
    "membrane": {
        "boundary": (str, "clamped"),
        "n_modes": (int, 1000),
        "g0": (float, 0.2),
        "quality_factor": (float, 1000.0),
        "frequency_unit": (str, "fundamental"),
        "tau": (float, 0.0),
    },
    "spectrum": {
        "nu_min": (float, None),
        "nu_max": (float, None),
        "n_points": (int, 400),
        "log_grid": (_parse_bool, True),
    },
    "exponent": {
        "tau_values": (_parse_floats, (0.0, 0.01, 0.1, 1.0, 10.0, 100.0, 1e4)),
        "n_fit_points": (int, 40),
    },
    "dephasing": {
        "temperature": (float, 0.0),
        "method": (str, "mode_sum"),
        "t_max": (float, None),
        "n_points": (int, 2000),
        "initial_sx": (float, 1.0),
    },
    "blp": {
        "g0_values": (_parse_floats, (0.2,)),
        "temperatures": (_parse_floats, (1e-3,)),
    },
    "spin": {
        "rabi": (float, 0.1),
    },
    "ensemble": {
        "n_traj": (int, 2000),
        "t_max": (float, 400.0),
        "dt": (float, None),
        "t_mem": (float, None),
        "temperature": (float, 0.0),
        "omega_star": (float, None),
    },
    "sweep": {
        "g_values": (_parse_floats, None),
        "threshold": (float, 0.05),
        "window_fraction": (float, 0.25),
        "estimator": (str, "oscillation_center"),
    },
}

_ESTIMATORS = ("window_mean", "oscillation_center")


def default_config() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in _SCHEMA.items()}


def _parse_one(section: str, key: str, raw: str):
    if section not in _SCHEMA:
        raise ConfigError(f"error: unknown section [{section}]")
    if key not in _SCHEMA[section]:
        raise ConfigError(f"error: {section}.{key}: unknown key")
    parser, _ = _SCHEMA[section][key]
    raw = raw.strip()
    if raw == "":
        return None
    try:
        return parser(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"error: {section}.{key}: {exc}") from None


def load_config(path) -> dict:
    """Parse and validate a config file into the full defaulted mapping."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"error: config parse failure: {exc}") from None
    cfg = default_config()
    for section in cp.sections():
        for key, raw in cp.items(section):
            cfg.setdefault(section, {})
            cfg[section][key] = _parse_one(section, key, raw)
    return cfg


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply `section.key=value` strings on top of a config mapping."""
    for item in assignments:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"error: override {item!r} is not section.key=value")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        cfg[section.strip()][key.strip()] = _parse_one(section.strip(), key.strip(), raw)
    return cfg


def dump_config(cfg: dict) -> str:
    """Serialize in schema order; deterministic byte-for-byte."""
    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        present = cfg.get(section, {})
        lines = []
        for key in keys:
            value = present.get(key, _SCHEMA[section][key][1])
            if value is None:
                continue
            lines.append(f"{key} = {_fmt(value)}")
        if lines:
            out.write(f"[{section}]\n")
            out.write("\n".join(lines))
            out.write("\n\n")
    return out.getvalue()


def membrane_spec_from(cfg: dict) -> MembraneSpec:
    m = cfg["membrane"]
    try:
        return MembraneSpec(
            boundary=m["boundary"],
            n_modes=m["n_modes"],
            g0=m["g0"],
            quality_factor=m["quality_factor"],
            frequency_unit=m["frequency_unit"],
            tau=m["tau"],
        )
    except ValueError as exc:
        raise ConfigError(f"error: membrane.{_field_hint(str(exc))}: {exc}") from None


def spin_from(cfg: dict) -> SpinParams:
    try:
        return SpinParams(rabi=cfg["spin"]["rabi"])
    except ValueError as exc:
        raise ConfigError(f"error: spin.rabi: {exc}") from None


def ensemble_from(cfg: dict, seed: int) -> EnsembleConfig:
    e = cfg["ensemble"]
    try:
        return EnsembleConfig(
            t_max=e["t_max"],
            n_traj=e["n_traj"],
            dt=e["dt"],
            t_mem=e["t_mem"],
            temperature=e["temperature"],
            seed=seed,
            omega_star=e["omega_star"],
        )
    except ValueError as exc:
        raise ConfigError(f"error: ensemble.{_field_hint(str(exc))}: {exc}") from None


def sweep_params_from(cfg: dict) -> dict:
    s = dict(cfg["sweep"])
    if s["g_values"] is None:
        raise ConfigError("error: sweep.g_values: required")
    if s["estimator"] not in _ESTIMATORS:
        raise ConfigError(f"error: sweep.estimator: must be one of {_ESTIMATORS}")
    return s


_FIELD_WORDS = (
    "boundary", "n_modes", "g0", "quality_factor", "frequency_unit", "tau",
    "t_max", "n_traj", "dt", "t_mem", "temperature", "seed", "omega_star", "rabi",
)


def _field_hint(message: str) -> str:
    for word in _FIELD_WORDS:
        if word in message:
            return word
    return "config"


def manifest_text(cfg: dict, subcommand: str, seed: int, mode_set_hash: str | None) -> str:
    resolved = {sec: dict(keys) for sec, keys in cfg.items()}
    resolved["run"]["subcommand"] = subcommand
    resolved["run"]["seed"] = seed
    resolved["run"]["version"] = __version__
    if mode_set_hash is not None:
        resolved["run"]["mode_set_hash"] = mode_set_hash
    return dump_config(resolved)
