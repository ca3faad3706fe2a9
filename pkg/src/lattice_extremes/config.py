"""Experiment configuration: YAML file, strict schema, stable hash."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

STEPS = ("census", "simulate", "tailfield", "timechange", "laplace", "theta", "ac", "frechet")


class ConfigError(Exception):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelPoint(_Strict):
    point: list[int]
    weight: float


class VConfig(_Strict):
    kind: Literal["constant", "shifted_kernel"]
    c: float = 1.0
    kernels: list[list[float]] = Field(default_factory=list)  # 1-d kernels starting at 0
    probs: Optional[list[float]] = None


class ModelConfig(_Strict):
    kind: Literal["iid_frechet", "moving_maxima", "de_haan", "linear"]
    alpha: float = 1.0
    scale: float = 1.0
    kernel: Optional[list[float]] = None  # 1-d weights a_0, a_1, ...
    kernel_points: Optional[list[KernelPoint]] = None
    v: Optional[VConfig] = None
    envelope: Optional[float] = None
    rel_tol: float = 1.0

    @model_validator(mode="after")
    def _check(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.kind in ("moving_maxima", "linear") and not (self.kernel or self.kernel_points):
            raise ValueError(f"{self.kind} needs kernel or kernel_points")
        if self.kind == "de_haan" and self.v is None:
            raise ValueError("de_haan needs a v block")
        return self


class IndexSetConfig(_Strict):
    kind: Literal["hyperrectangle", "file", "lattice_union", "spacetime"]
    n: list[int] = Field(default_factory=lambda: [100])  # hyperrectangle sides / bounding box
    path: Optional[str] = None
    basis: list[list[int]] = Field(default_factory=list)
    offsets: list[list[int]] = Field(default_factory=list)
    stations: Optional[list[list[int]]] = None
    stations_path: Optional[str] = None
    period: int = 1
    m: int = 10

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "file" and not self.path:
            raise ValueError("file index set needs path")
        if self.kind == "lattice_union" and not self.offsets:
            raise ValueError("lattice_union needs offsets")
        if self.kind == "spacetime" and not (self.stations or self.stations_path):
            raise ValueError("spacetime needs stations or stations_path")
        if any(x < 1 for x in self.n):
            raise ValueError("sides must be positive")
        return self


class OrderConfig(_Strict):
    perm: Optional[list[int]] = None


class CensusConfig(_Strict):
    ps: list[int] = Field(default_factory=lambda: [2, 4])
    probe_radius: Optional[int] = None
    ns: Optional[list[int]] = None


class SimulateConfig(_Strict):
    realizations: int = 200
    block: int = 64
    dump: bool = True


class GConfig(_Strict):
    kind: Literal["bump", "threshold"] = "bump"
    b1: float = 1.0
    b2: float = 20.0
    c: float = 1.0
    level: float = 0.5


class TailConfig(_Strict):
    quantiles: list[float] = Field(default_factory=lambda: [0.95, 0.99, 0.999])
    radius: int = 2
    min_quantile: float = 0.9


class TimeChangeConfig(_Strict):
    budget: int = 100_000
    zero_tol: float = 0.05  # empirical Θ only: |Θ_t| below this counts as 0
    pairs: Optional[list[list[list[int]]]] = None
    g: list[GConfig] = Field(default_factory=lambda: [GConfig(kind="threshold", level=0.5),
                                                      GConfig(b1=0.3, b2=3.0), GConfig(b1=0.5, b2=10.0, c=2.0)])


class LaplaceConfig(_Strict):
    sizes: Optional[list[int]] = None
    realizations: int = 1000
    budget: int = 50_000
    R: int = 8
    g: Optional[list[GConfig]] = None
    max_residual: float = 1e-3


class ThetaConfig(_Strict):
    r: Optional[int] = None
    tau: float = 1.0
    tau_sweep: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    budget: int = 50_000
    R: int = 8


class ACConfig(_Strict):
    r: Optional[int] = None
    l: list[int] = Field(default_factory=lambda: [0, 1, 2, 4, 8])
    eps: float = 0.02


class FrechetConfig(_Strict):
    theta: Optional[float] = None  # default: block estimate
    level: float = 0.05


class ExperimentConfig(_Strict):
    seed: int = 0
    out: str = "results"
    threads: int = 1
    steps: list[Literal[STEPS]] = Field(default_factory=lambda: list(STEPS))
    model: Optional[ModelConfig] = None
    index_set: IndexSetConfig
    order: OrderConfig = Field(default_factory=OrderConfig)
    census: CensusConfig = Field(default_factory=CensusConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)
    tailfield: TailConfig = Field(default_factory=TailConfig)
    timechange: TimeChangeConfig = Field(default_factory=TimeChangeConfig)
    laplace: LaplaceConfig = Field(default_factory=LaplaceConfig)
    theta: ThetaConfig = Field(default_factory=ThetaConfig)
    ac: ACConfig = Field(default_factory=ACConfig)
    frechet: FrechetConfig = Field(default_factory=FrechetConfig)
    plots: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        return self


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read YAML, apply CLI overrides (they win), validate."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"bad YAML: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from None
    base = Path(path).resolve().parent
    for attr in ("path", "stations_path"):
        p = getattr(cfg.index_set, attr)
        if p and not Path(p).is_absolute():
            setattr(cfg.index_set, attr, str(base / p))
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form; key order in the file does not matter."""
    data = cfg.model_dump(mode="json", exclude={"threads", "out"})
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
