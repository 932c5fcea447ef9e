"""JSON experiment configuration with strict schema checking."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1
EXPERIMENTS = ("deconv", "phase", "quadratic", "opnorm", "custom")


class ConfigError(ValueError):
    pass


# Spike positions/amplitudes of the deconvolution ground truth.
DEFAULT_SPIKES = ((-0.3, 1.0), (-0.12, -0.6), (0.05, 0.8), (0.2, 0.5), (0.36, -0.9))


@dataclass
class SolverConfig:
    variant: str = "V1"
    sigma: float | None = None
    tau: float | None = None
    C: float | None = None
    theta: float | None = None
    gamma: float = 1.0
    delta: float = 1.0
    mu: float | None = None
    max_iters: int = 100_000
    #: None picks the experiment default (1e-5 deconvolution, 1e-12 quadratic)
    tol: float | None = None
    stag_tol: float = 1e-12
    #: "scaled": a deconvolution sigma is nominal and multiplied by
    #: NOMINAL_OP_NORM/||T||_2; "none": sigma is used as is.
    sigma_scaling: str = "scaled"


@dataclass
class DeconvConfig:
    n_x: int = 64
    n_y: int = 127
    kernel_decay: float = 5.0
    quadrature: str = "none"
    r: float = 1.25
    alpha: float = 5.0
    penalty: str = "l1"
    noise_level: float = 0.18
    sigma_nominal: float = 0.0023
    spikes: list = field(default_factory=lambda: [list(s) for s in DEFAULT_SPIKES])
    reference_budget: int = 1_000_000


@dataclass
class ComparisonConfig:
    repetitions: int = 10
    sigmas: list = field(default_factory=lambda: [0.007, 0.0023, 0.00075])
    r_values: list = field(default_factory=lambda: [2.0, 1.25])
    C_hilbert_offset: float = 2.0**-7
    C_banach: float = 0.93
    max_iters: int = 400_000


@dataclass
class PhaseConfig:
    n: int = 64
    kappa: float = 1.0
    R: float = 1.0
    D: float = 1.0
    r: float = 1.1
    s: float = 1.0
    alpha0: float = 1e-3
    rho: float = 0.5
    newton_steps: int = 2
    inner_iters: int = 300
    epsilon: float = 0.1
    photons: float = 1e4
    C: float = 0.96


@dataclass
class QuadraticConfig:
    n: int = 1
    m: int = 1
    r: float = 2.0
    alpha: float = 1.0
    y0: float = 1.0


@dataclass
class OutputConfig:
    dir: str = "out"
    timing: bool = False
    dump_solution: bool = True


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    experiment: str = "deconv"
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    deconv: DeconvConfig = field(default_factory=DeconvConfig)
    comparison: ComparisonConfig = field(default_factory=ComparisonConfig)
    phase: PhaseConfig = field(default_factory=PhaseConfig)
    quadratic: QuadraticConfig = field(default_factory=QuadraticConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        s = self.solver
        if s.variant not in ("V1", "V2", "V3"):
            raise ConfigError(f"unknown solver variant {s.variant!r}")
        if s.sigma_scaling not in ("scaled", "none"):
            raise ConfigError("solver.sigma_scaling must be 'scaled' or 'none'")
        if s.max_iters < 1:
            raise ConfigError("solver.max_iters must be >= 1")
        d = self.deconv
        if d.quadrature not in ("none", "trapezoid"):
            raise ConfigError("deconv.quadrature must be 'none' or 'trapezoid'")
        if d.penalty not in ("l1", "power_norm"):
            raise ConfigError("deconv.penalty must be 'l1' or 'power_norm'")
        if not 1 < d.r <= 2:
            raise ConfigError("deconv.r must lie in (1, 2]")
        if d.noise_level < 0:
            raise ConfigError("deconv.noise_level must be nonnegative")
        if d.n_x < 2 or d.n_y < 2:
            raise ConfigError("deconv grid sizes must be >= 2")
        if d.reference_budget < 100_000:
            raise ConfigError("deconv.reference_budget must be >= 1e5")
        for sp in d.spikes:
            if len(sp) != 2:
                raise ConfigError("each spike is a [position, amplitude] pair")
        if self.comparison.repetitions < 1:
            raise ConfigError("comparison.repetitions must be >= 1")
        p = self.phase
        if p.n < 2 or p.n % 2:
            raise ConfigError("phase.n must be even")
        if not 0 < p.rho < 1:
            raise ConfigError("phase.rho must lie in (0, 1)")
        if not 1 < p.r <= 2:
            raise ConfigError("phase.r must lie in (1, 2]")
        if p.photons <= 0:
            raise ConfigError("phase.photons must be positive")
        q = self.quadratic
        if q.n < 1 or q.m < 1 or not 1 < q.r <= 2:
            raise ConfigError("quadratic needs n, m >= 1 and r in (1, 2]")
        return self


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kw = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kw[name] = _build(type(default), value, f"{path}.{name}" if path else name)
        else:
            kw[name] = _coerce(value, default, f"{path}.{name}" if path else name)
    return cls(**kw)


def _coerce(value, default, where):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        return value
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(data)
