"""Experiment configuration: TOML files, environment overrides, run manifests.

Schema (every key optional; defaults shown by ``default_config()``)::

    [model]      mediator, omega_cav, omega_q, g, n_fock, omega_ext, lam
    [dicke]      modes, n_fock, mode_freqs, g_matrix, lambda_matrix,
                 external_levels, anharmonicity
    [scale]      cavity_ghz
    [thermal]    temperature_mk | theta
    [losses]     kappa_mhz, gamma_mhz, gamma_local_mhz, gamma_phi_mhz,
                 detailed_balance          (rates quoted as Gamma/2pi)
    [qst]        samples, scheme, seed, n_times, t_max, qrs_cutoff, channels
    [transfer]   n_times, t_max, channels
    [sweep]      parameter, start, stop, points, levels
    [check]      audit_levels, audit_extra, audit_tol, selection_levels

``omega_ext = "auto"`` tunes both external sites to the lowest
parity-forbidden mediator transition; ``t_max = "auto"`` derives the
horizon from the effective exchange.  Environment variables
``PQST_<SECTION>__<KEY>`` override file values (parsed as TOML literals).
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from math import sqrt
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .models import DickeParams, FullModelParams, InvalidParametersError, QrsParams
from .protocol import LossRates, QstConfig, TransferConfig
from .spectral import forbidden_level
from .units import PhysicalScale

ENV_PREFIX = "PQST_"
MANIFEST_NAME = "manifest.json"
AUTO = "auto"


class ConfigError(ValueError):
    """Unreadable, malformed or inconsistent configuration."""


_DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {
        "mediator": "rabi",
        "omega_cav": 1.0,
        "omega_q": [1.0, 1.0],
        "g": [0.3, 0.3],
        "n_fock": 16,
        "omega_ext": AUTO,
        "lam": [0.02, 0.02],
    },
    "dicke": {
        "modes": 2,
        "n_fock": 8,
        "mode_freqs": AUTO,
        "g_matrix": AUTO,
        "lambda_matrix": AUTO,
        "external_levels": 2,
        "anharmonicity": 0.0,
    },
    "scale": {"cavity_ghz": 8.13},
    "thermal": {"temperature_mk": 100.0, "theta": AUTO},
    "losses": {
        "kappa_mhz": 0.10,
        "gamma_mhz": 15.0,
        "gamma_local_mhz": 0.48,
        "gamma_phi_mhz": 0.15,
        "detailed_balance": False,
    },
    "qst": {
        "samples": 4000,
        "scheme": "fibonacci",
        "seed": 0,
        "n_times": 600,
        "t_max": AUTO,
        "qrs_cutoff": AUTO,
        "channels": "allowed",
    },
    "transfer": {"n_times": 800, "t_max": AUTO, "channels": "allowed"},
    "sweep": {"parameter": "g", "start": 0.0, "stop": 1.0, "points": 200, "levels": 8},
    "check": {"audit_levels": 10, "audit_extra": 6, "audit_tol": 1e-8, "selection_levels": 12},
}

SWEEP_PARAMETERS = ("g", "omega_q", "omega_cav")


def default_config() -> dict[str, dict[str, Any]]:
    return copy.deepcopy(_DEFAULTS)


def _merge(base: dict, extra: Mapping, where: str) -> None:
    for section, values in extra.items():
        if section not in base:
            raise ConfigError(f"{where}: unknown section [{section}]")
        if not isinstance(values, Mapping):
            raise ConfigError(f"{where}: [{section}] must be a table")
        for key, value in values.items():
            if key not in base[section]:
                raise ConfigError(f"{where}: unknown key {section}.{key}")
            base[section][key] = value


def _parse_literal(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def env_overrides(env: Mapping[str, str]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            raise ConfigError(f"environment override {name} must look like {ENV_PREFIX}SECTION__KEY")
        section, key = rest.split("__", 1)
        out.setdefault(section.lower(), {})[key.lower()] = _parse_literal(raw)
    return out


def load_config(path: str | os.PathLike | None = None, env: Mapping[str, str] | None = None,
                overrides: Mapping | None = None) -> dict[str, dict[str, Any]]:
    """Defaults, then file, then environment, then explicit overrides; validated."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        _merge(cfg, data, str(path))
    _merge(cfg, env_overrides(os.environ if env is None else env), "environment")
    if overrides:
        _merge(cfg, overrides, "command line")
    validate(cfg)
    return cfg


# ---------------------------------------------------------------- validation


def _number(cfg, section, key, lo=None, positive=False, integer=False):
    v = cfg[section][key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{section}.{key} must be an integer")
    if positive and v <= 0:
        raise ConfigError(f"{section}.{key} must be positive")
    if lo is not None and v < lo:
        raise ConfigError(f"{section}.{key} must be >= {lo}")
    return v


def _pair(cfg, section, key, lo=0.0):
    v = cfg[section][key]
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v, v]
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        raise ConfigError(f"{section}.{key} must be a number or a pair of numbers")
    if min(v) < lo:
        raise ConfigError(f"{section}.{key} entries must be >= {lo}")
    return [float(x) for x in v]


def _choice(cfg, section, key, options):
    v = cfg[section][key]
    if v not in options:
        raise ConfigError(f"{section}.{key} must be one of {options}, got {v!r}")
    return v


def _auto_or(cfg, section, key, check):
    if cfg[section][key] != AUTO:
        check()


def validate(cfg: dict) -> None:
    _choice(cfg, "model", "mediator", ("rabi", "dicke"))
    _number(cfg, "model", "omega_cav", positive=True)
    _pair(cfg, "model", "omega_q", lo=1e-12)
    _pair(cfg, "model", "g")
    _number(cfg, "model", "n_fock", lo=2, integer=True)
    _auto_or(cfg, "model", "omega_ext", lambda: _pair(cfg, "model", "omega_ext", lo=1e-12))
    _pair(cfg, "model", "lam")
    _number(cfg, "dicke", "modes", lo=1, integer=True)
    _number(cfg, "dicke", "n_fock", lo=2, integer=True)
    _choice(cfg, "dicke", "external_levels", (2, 3))
    _number(cfg, "dicke", "anharmonicity")
    for key in ("mode_freqs", "g_matrix", "lambda_matrix"):
        v = cfg["dicke"][key]
        if v != AUTO and not isinstance(v, list):
            raise ConfigError(f"dicke.{key} must be \"auto\" or an array")
    _number(cfg, "scale", "cavity_ghz", positive=True)
    _number(cfg, "thermal", "temperature_mk", lo=0)
    _auto_or(cfg, "thermal", "theta", lambda: _number(cfg, "thermal", "theta", lo=0))
    for key in ("kappa_mhz", "gamma_mhz"):
        _number(cfg, "losses", key, lo=0)
    for key in ("gamma_local_mhz", "gamma_phi_mhz"):
        _pair(cfg, "losses", key)
    if not isinstance(cfg["losses"]["detailed_balance"], bool):
        raise ConfigError("losses.detailed_balance must be true or false")
    _number(cfg, "qst", "samples", lo=1, integer=True)
    _choice(cfg, "qst", "scheme", ("fibonacci", "seeded-uniform"))
    _number(cfg, "qst", "seed", lo=0, integer=True)
    _number(cfg, "qst", "n_times", lo=2, integer=True)
    _auto_or(cfg, "qst", "t_max", lambda: _number(cfg, "qst", "t_max", positive=True))
    _auto_or(cfg, "qst", "qrs_cutoff", lambda: _number(cfg, "qst", "qrs_cutoff", positive=True))
    _choice(cfg, "qst", "channels", ("doublet", "allowed"))
    _number(cfg, "transfer", "n_times", lo=2, integer=True)
    _auto_or(cfg, "transfer", "t_max", lambda: _number(cfg, "transfer", "t_max", positive=True))
    _choice(cfg, "transfer", "channels", ("doublet", "allowed"))
    _choice(cfg, "sweep", "parameter", SWEEP_PARAMETERS)
    _number(cfg, "sweep", "start")
    _number(cfg, "sweep", "stop")
    _number(cfg, "sweep", "points", lo=1, integer=True)
    _number(cfg, "sweep", "levels", lo=1, integer=True)
    _number(cfg, "check", "audit_levels", lo=1, integer=True)
    _number(cfg, "check", "audit_extra", lo=1, integer=True)
    _number(cfg, "check", "audit_tol", positive=True)
    _number(cfg, "check", "selection_levels", lo=2, integer=True)
    try:
        build_mediator_params(cfg)
    except InvalidParametersError as exc:
        raise ConfigError(str(exc)) from exc


def parse_sweep(text: str) -> dict[str, Any]:
    """``name:start:stop:points`` -> sweep section overrides."""
    parts = text.split(":")
    if len(parts) != 4:
        raise ConfigError(f"--sweep expects name:start:stop:points, got {text!r}")
    name, start, stop, points = parts
    if name not in SWEEP_PARAMETERS:
        raise ConfigError(f"--sweep parameter must be one of {SWEEP_PARAMETERS}")
    try:
        return {"parameter": name, "start": float(start), "stop": float(stop), "points": int(points)}
    except ValueError as exc:
        raise ConfigError(f"--sweep: {exc}") from exc


# ---------------------------------------------------------------- builders


def scale_of(cfg) -> PhysicalScale:
    return PhysicalScale(float(cfg["scale"]["cavity_ghz"]))


def theta_of(cfg) -> float:
    th = cfg["thermal"]["theta"]
    if th != AUTO:
        return float(th)
    return scale_of(cfg).theta(float(cfg["thermal"]["temperature_mk"]) * 1e-3)


def losses_of(cfg) -> LossRates:
    lo = cfg["losses"]
    pair = lambda v: (v, v) if isinstance(v, (int, float)) else tuple(v)  # noqa: E731
    return LossRates.from_mhz(scale_of(cfg), lo["kappa_mhz"], lo["gamma_mhz"],
                              pair(lo["gamma_local_mhz"]), pair(lo["gamma_phi_mhz"]))


def build_mediator_params(cfg, mediator: str | None = None):
    """``QrsParams`` or ``DickeParams`` (with provisional ``omega_ext``)."""
    m = cfg["model"]
    mediator = mediator or m["mediator"]
    g = _pair(cfg, "model", "g")
    wq = _pair(cfg, "model", "omega_q", lo=1e-12)
    lam = _pair(cfg, "model", "lam")
    if mediator == "rabi":
        return QrsParams(float(m["omega_cav"]), tuple(wq), tuple(g), int(m["n_fock"]))
    d = cfg["dicke"]
    M = int(d["modes"])
    s = sqrt(M)
    freqs = tuple(d["mode_freqs"]) if d["mode_freqs"] != AUTO else (float(m["omega_cav"]),) * M
    gm = d["g_matrix"] if d["g_matrix"] != AUTO else [[g[0] / s, g[1] / s]] * len(freqs)
    lm = d["lambda_matrix"] if d["lambda_matrix"] != AUTO else [[lam[0] / s] * len(freqs), [lam[1] / s] * len(freqs)]
    return DickeParams(
        mode_freqs=freqs,
        g_matrix=tuple(map(tuple, gm)),
        lambda_matrix=tuple(map(tuple, lm)),
        omega_q=tuple(wq),
        n_fock=int(d["n_fock"]),
        external_levels=int(d["external_levels"]),
        anharmonicity=float(d["anharmonicity"]),
        defaults_flagged=d["g_matrix"] == AUTO or d["lambda_matrix"] == AUTO,
    )


def build_model(cfg, mediator: str | None = None):
    """Full (``FullModelParams``) or Dicke (``DickeParams``) model with resolved ``omega_ext``."""
    from dataclasses import replace

    from .protocol import mediator_system

    med = build_mediator_params(cfg, mediator)
    lam = tuple(_pair(cfg, "model", "lam"))
    wext = cfg["model"]["omega_ext"]
    if isinstance(med, QrsParams):
        model = FullModelParams(qrs=med, omega_ext=(1.0, 1.0), lam=lam)
    else:
        model = med
    if wext == AUTO:
        es = mediator_system(model)[1]
        w = es.nu(forbidden_level(es))
        return replace(model, omega_ext=(w, w))
    return replace(model, omega_ext=tuple(_pair(cfg, "model", "omega_ext", lo=1e-12)))


def qst_config_of(cfg, model) -> QstConfig:
    q = cfg["qst"]
    cutoff = q["qrs_cutoff"]
    if cutoff == AUTO:
        cutoff = 2.2 if isinstance(model, DickeParams) else 3.0
    return QstConfig(
        model=model,
        theta=theta_of(cfg),
        rates=losses_of(cfg),
        bloch_samples=int(q["samples"]),
        scheme=q["scheme"],
        seed=int(q["seed"]),
        t_max=None if q["t_max"] == AUTO else float(q["t_max"]),
        n_times=int(q["n_times"]),
        qrs_cutoff=float(cutoff),
        channels=q["channels"],
        detailed_balance=bool(cfg["losses"]["detailed_balance"]),
    )


def transfer_config_of(cfg, model, effective_only: bool = False) -> TransferConfig:
    t = cfg["transfer"]
    return TransferConfig(model=model, t_max=None if t["t_max"] == AUTO else float(t["t_max"]),
                          n_times=int(t["n_times"]), channels=t["channels"], effective_only=effective_only)


# ---------------------------------------------------------------- manifest


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(cfg: Mapping) -> str:
    """SHA-256 of the canonical (sorted-key) JSON form; independent of key order."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    config_hash: str = ""
    outputs: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = config_hash(self.config)

    def write(self, directory: str | os.PathLike) -> Path:
        path = Path(directory) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, directory: str | os.PathLike) -> "RunManifest":
        data = json.loads((Path(directory) / MANIFEST_NAME).read_text())
        return cls(**data)
