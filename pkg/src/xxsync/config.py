"""Experiment configuration files.

A configuration is a JSON object with a versioned ``schema`` key.  It is
validated against a JSON schema before any field is interpreted, so unknown
keys and malformed values are rejected up front.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .dfs import NoiseSpec
from .dynamics import IntegratorConfig
from .hilbert import QUBIT_PRESETS, ChainSpec

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "Analyses",
    "ExperimentConfig",
    "load_config",
    "load_preset",
    "preset_names",
]

SCHEMA_VERSION = "xxsync-experiment/1"


class ConfigError(ValueError):
    """Raised for any configuration that fails validation."""


_NUMBER = {"type": "number"}
_COMPLEX = {"oneOf": [_NUMBER, {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2}]}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "chain", "noise", "initial_state", "integrator"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "description": {"type": "string"},
        "chain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N", "omega", "J"],
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "omega": _NUMBER,
                "J": _NUMBER,
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "required": ["sites", "rates"],
            "properties": {
                "sites": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "rates": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "thermal_rates": {
                    "oneOf": [{"type": "null"},
                              {"type": "array", "items": {"type": "number", "minimum": 0}}],
                },
            },
        },
        "initial_state": {
            "type": "array",
            "items": {
                "oneOf": [
                    {"enum": sorted(QUBIT_PRESETS)},
                    {"type": "array", "items": _COMPLEX, "minItems": 2, "maxItems": 2},
                ]
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "record_stride": {"type": "integer", "minimum": 1},
                "method": {"enum": ["rk4", "adaptive_rk45"]},
                "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                "abs_tol": {"type": "number", "exclusiveMinimum": 0},
                "snapshot_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "analyses": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pearson": {"type": "boolean"},
                "spectrum": {"type": "boolean"},
                "concurrence": {"type": "boolean"},
                "predict": {"type": "boolean"},
                "compare": {"type": "boolean"},
                "pearson_window": {"oneOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0}]},
                "spectrum_t_start": {"oneOf": [{"type": "null"}, {"type": "number", "minimum": 0}]},
                "bright_threshold": {"type": "number", "exclusiveMinimum": 0},
                "compare_window": {"type": "number", "exclusiveMinimum": 0},
                "t_star": {"oneOf": [{"type": "null"}, {"type": "number", "minimum": 0}]},
            },
        },
        "output_dir": {"type": "string"},
    },
}


@dataclass(frozen=True)
class Analyses:
    """Which diagnostics to run and their optional parameters.

    ``pearson_window`` defaults to two periods of the slowest predicted dark
    frequency.  ``t_star`` overrides the detected onset of the asymptotic
    regime for the predict/compare steps.
    """

    pearson: bool = True
    spectrum: bool = True
    concurrence: bool = True
    predict: bool = True
    compare: bool = True
    pearson_window: float | None = None
    spectrum_t_start: float | None = None
    bright_threshold: float = 1e-9
    compare_window: float = 500.0
    t_star: float | None = None


def _qubit_to_json(q):
    if isinstance(q, str):
        return q
    out = []
    for z in q:
        z = complex(z)
        out.append(z.real if z.imag == 0 else [z.real, z.imag])
    return out


def _qubit_from_json(q):
    if isinstance(q, str):
        return q
    amps = []
    for z in q:
        amps.append(complex(z[0], z[1]) if isinstance(z, list) else complex(z))
    return tuple(amps)


@dataclass(frozen=True)
class ExperimentConfig:
    chain: ChainSpec
    noise: NoiseSpec
    initial_state: tuple
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    analyses: Analyses = field(default_factory=Analyses)
    output_dir: str = "out"
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "initial_state", tuple(
            q if isinstance(q, str) else tuple(complex(z) for z in q) for q in self.initial_state))
        if len(self.initial_state) != self.chain.N:
            raise ConfigError(
                f"initial_state lists {len(self.initial_state)} qubits for N={self.chain.N}")
        try:
            self.noise.check_chain(self.chain.N)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{where}: {exc.message}") from None
        try:
            chain = ChainSpec(**data["chain"])
            noise = NoiseSpec(**data["noise"])
            integ = IntegratorConfig(**data["integrator"])
            analyses = Analyses(**data.get("analyses", {}))
            initial = tuple(_qubit_from_json(q) for q in data["initial_state"])
            return cls(chain, noise, initial, integ, analyses,
                       data.get("output_dir", "out"), data.get("description", ""))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        it = self.integrator
        a = self.analyses
        d = {
            "schema": SCHEMA_VERSION,
            "description": self.description,
            "chain": {"N": self.chain.N, "omega": self.chain.omega, "J": self.chain.J},
            "noise": {
                "sites": list(self.noise.sites),
                "rates": list(self.noise.rates),
                "thermal_rates": None if self.noise.thermal_rates is None else list(self.noise.thermal_rates),
            },
            "initial_state": [_qubit_to_json(q) for q in self.initial_state],
            "integrator": {
                "dt": it.dt, "t_max": it.t_max, "record_stride": it.record_stride,
                "method": it.method, "rel_tol": it.rel_tol, "abs_tol": it.abs_tol,
                "snapshot_times": list(it.snapshot_times),
            },
            "analyses": {
                "pearson": a.pearson, "spectrum": a.spectrum, "concurrence": a.concurrence,
                "predict": a.predict, "compare": a.compare,
                "pearson_window": a.pearson_window, "spectrum_t_start": a.spectrum_t_start,
                "bright_threshold": a.bright_threshold, "compare_window": a.compare_window,
                "t_star": a.t_star,
            },
            "output_dir": self.output_dir,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def with_overrides(self, **params) -> "ExperimentConfig":
        """Copy with sweepable scalars replaced: ``N``, ``omega``, ``J``,
        ``gamma`` (all decay rates), ``dt``, ``t_max``."""
        chain, noise, integ, initial = self.chain, self.noise, self.integrator, self.initial_state
        for key, value in params.items():
            if key in ("omega", "J"):
                chain = replace(chain, **{key: float(value)})
            elif key == "N":
                n = int(value)
                chain = replace(chain, N=n)
                # extra qubits start in the ground state; surplus ones are dropped
                initial = (tuple(initial) + ("zero",) * n)[:n]
            elif key == "gamma":
                noise = replace(noise, rates=(float(value),) * len(noise.sites))
            elif key in ("dt", "t_max"):
                integ = replace(integ, **{key: float(value)})
            else:
                raise ConfigError(f"parameter {key!r} cannot be swept")
        return replace(self, chain=chain, noise=noise, integrator=integ, initial_state=initial)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(data)


def preset_names() -> list[str]:
    files = resources.files("xxsync").joinpath("presets")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ExperimentConfig:
    ref = resources.files("xxsync").joinpath("presets", f"{name}.json")
    if not ref.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return ExperimentConfig.from_dict(json.loads(ref.read_text()))
