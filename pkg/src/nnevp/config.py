"""Run configuration: a strict YAML schema built from nested dataclasses.

Unknown keys, wrong types and out-of-domain values raise ``ConfigError``
before any computation starts.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field

import yaml

from .elasticity import ElasticParams
from .reference import HallPetchParams, JohnsonCookParams, PowerLawParams
from .solver import LoadingProgram, SolverOptions
from .training import TrainConfig

GENERATORS = ("power-law", "johnson-cook", "hall-petch")
EXPERIMENTS = ("perfect-plasticity", "hardening", "hall-petch")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GenerateConfig:
    model: str = "power-law"
    power_law: PowerLawParams = PowerLawParams()
    exponents: tuple = (10.0,)  # power-law n values, one curve each
    strain_rates: tuple = (1e-3,)
    johnson_cook: JohnsonCookParams = JohnsonCookParams()
    rate_exponent: float = 20.0  # power-law n used with Johnson-Cook hardening
    hall_petch: HallPetchParams = HallPetchParams()
    grains: tuple = (2.1, 3.4, 7.1, 15.0)  # um
    base_stress: float = 0.0  # grain-independent part of the initial yield, MPa

    def __post_init__(self):
        if self.model not in GENERATORS:
            raise ValueError(f"generate.model must be one of {GENERATORS}")
        if not self.exponents or not self.strain_rates or not self.grains:
            raise ValueError("exponent, strain-rate and grain lists must be nonempty")
        if any(r <= 0.0 for r in self.strain_rates) or any(d <= 0.0 for d in self.grains):
            raise ValueError("strain rates and grain sizes must be positive")


@dataclass(frozen=True)
class NetConfig:
    hidden: tuple = (20, 20)
    activation: str | None = None  # default per network role
    alpha: tuple = (0.2, 0.8)  # mix weights (first, second component)
    train_alpha: bool = False
    free_biases: bool | None = None  # default per network role
    in_scale: float = 1.0
    init_seed_offset: int = 0

    def __post_init__(self):
        if len(self.alpha) != 2 or min(self.alpha) < 0.0 or sum(self.alpha) <= 0.0:
            raise ValueError("alpha must be two nonnegative weights with a positive sum")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden layer sizes must be positive")
        if not self.in_scale > 0.0:
            raise ValueError("in_scale must be positive")


@dataclass(frozen=True)
class ModelConfig:
    experiment: str = "perfect-plasticity"
    potential: NetConfig = NetConfig()
    hardening: NetConfig = NetConfig(activation="relu+tanh", in_scale=0.01)
    hall_petch: NetConfig = NetConfig(hidden=(10, 10), activation="tanh", in_scale=10.0)  # um
    rate_ref: float | None = None  # default: applied strain rate
    rate_norm: str = "effective"  # or "frobenius"
    stress_ref: float | None = None  # default: largest data stress

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"model.experiment must be one of {EXPERIMENTS}")
        if self.rate_norm not in ("effective", "frobenius"):
            raise ValueError("model.rate_norm must be 'effective' or 'frobenius'")
        for v in (self.rate_ref, self.stress_ref):
            if v is not None and not v > 0.0:
                raise ValueError("reference rate and stress must be positive")


@dataclass(frozen=True)
class DataConfig:
    manifest: str | None = None
    train_strain: float | None = None  # truncate training curves at this strain


@dataclass(frozen=True)
class ExtrapolateConfig:
    params: str | None = None
    total_strain: float = 0.02
    truth: str | None = None  # optional reference curve for the overlay

    def __post_init__(self):
        if not self.total_strain > 0.0:
            raise ValueError("extrapolate.total_strain must be positive")


@dataclass(frozen=True)
class DiscoverConfig:
    params: str | None = None
    grains: tuple = (0.5, 1.0, 2.1, 3.4, 5.0, 7.1, 10.0, 15.0, 20.0, 50.0, 100.0, 250.0, 500.0)
    train_grains: tuple | None = None

    def __post_init__(self):
        if any(d <= 0.0 for d in self.grains):
            raise ValueError("grain sizes must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    elastic: ElasticParams = ElasticParams(130e3, 0.34)
    loading: LoadingProgram = LoadingProgram()
    solver: SolverOptions = SolverOptions(predictor="previous")
    generate: GenerateConfig = GenerateConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    extrapolate: ExtrapolateConfig = ExtrapolateConfig()
    discover_hp: DiscoverConfig = DiscoverConfig()

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


# ---------------------------------------------------------------- loading
def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return build(tp, value, where)
    if tp is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(_scalar(v, f"{where}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        return _number(value, where)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    raise ConfigError(f"{where}: unsupported field type {tp}")  # pragma: no cover


def _number(value, where):
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        # YAML 1.1 reads 1e-3 (no dot) as a string
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"{where}: expected a number, got {value!r}")


def _scalar(value, where):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return value
    return _number(value, where)


def build(cls, data: dict, where: str = ""):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        sub = f"{where}.{f.name}" if where else f.name
        value = data[f.name]
        if dataclasses.is_dataclass(hints[f.name]) and isinstance(value, dict):
            # merge onto the default so partial sections keep other defaults
            default = getattr(cls(), f.name) if _has_defaults(cls) else None
            if default is not None:
                base = dataclasses.asdict(default)
                base.update(value)
                value = {k: v for k, v in base.items()}
        kwargs[f.name] = _coerce(hints[f.name], value, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _has_defaults(cls) -> bool:
    return all(f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING
               for f in dataclasses.fields(cls))


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build(RunConfig, doc)


def to_dict(cfg) -> dict:
    return _plain(dataclasses.asdict(cfg))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x
