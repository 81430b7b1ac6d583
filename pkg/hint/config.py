import json
import os
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional

from dotenv import load_dotenv

from hint.errors import ConfigError

# Load environment variables
load_dotenv()


class Settings:
    SEED = int(os.getenv("HINT_SEED", "0"))
    BATCH_SIZE = int(os.getenv("HINT_BATCH_SIZE", "256"))
    LEARNING_RATE = float(os.getenv("HINT_LEARNING_RATE", "1e-3"))
    EPOCHS = int(os.getenv("HINT_EPOCHS", "50"))
    TRAIN_SET_SIZE = int(os.getenv("HINT_TRAIN_SET_SIZE", "8000"))
    N_OUT = int(os.getenv("HINT_N_OUT", "10000"))
    OUTPUT_DIR = os.getenv("HINT_OUTPUT_DIR", "runs")
    LOG_LEVEL = os.getenv("HINT_LOG_LEVEL", "INFO")
    PROGRESS = os.getenv("HINT_PROGRESS", "1") not in ("0", "false", "False", "")
    WORKERS = int(os.getenv("HINT_WORKERS", "1"))
    CLAMP = float(os.getenv("HINT_CLAMP", "2.0"))
    LEAKY_SLOPE = float(os.getenv("HINT_LEAKY_SLOPE", "0.01"))


settings = Settings()

CASES = ("case1", "case2", "case3", "sequential")
PROBLEM_KINDS = ("linear-gaussian", "clv", "lorenz96")


@dataclass
class ArchitectureConfig:
    kind: str = "hint"
    n_layers: int = 4
    depth: int = 2
    hidden_layers: int = 2
    width_factor: int = 4
    leaky_slope: float = field(default_factory=lambda: settings.LEAKY_SLOPE)
    clamp: Optional[float] = field(default_factory=lambda: settings.CLAMP)
    n_reflectors: Optional[int] = None
    mixing: str = "householder"
    mobius_gamma: int = 0
    init_scale: float = 0.0

    def validate(self):
        if self.kind not in ("hint", "inn"):
            raise ConfigError(f"architecture.kind must be 'hint' or 'inn', got {self.kind!r}")
        if self.n_layers < 1:
            raise ConfigError("architecture.n_layers must be >= 1")
        if self.depth < 1:
            raise ConfigError("architecture.depth must be >= 1")
        if self.hidden_layers < 0 or self.width_factor < 1:
            raise ConfigError("architecture.hidden_layers must be >= 0 and width_factor >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError("architecture.leaky_slope must lie in (0, 1)")
        if self.clamp is not None and self.clamp <= 0:
            raise ConfigError("architecture.clamp must be positive or null")
        if self.mixing not in ("householder", "mobius"):
            raise ConfigError(f"architecture.mixing must be 'householder' or 'mobius', got {self.mixing!r}")
        if self.mobius_gamma not in (0, 2):
            raise ConfigError("architecture.mobius_gamma must be 0 or 2")
        if self.n_reflectors is not None and self.n_reflectors < 0:
            raise ConfigError("architecture.n_reflectors must be >= 0")

    def reflectors_for(self, dim: int) -> int:
        if self.n_reflectors is None:
            return min(dim, 8)
        return self.n_reflectors

    def hidden_widths(self, dim_in: int) -> List[int]:
        return [self.width_factor * dim_in] * self.hidden_layers


@dataclass
class AnnealConfig:
    initial: float
    factor: float

    def validate(self):
        if self.initial <= 0:
            raise ConfigError("training.anneal.initial must be positive")
        if not 0.0 < self.factor < 1.0:
            raise ConfigError("training.anneal.factor must lie in (0, 1)")


@dataclass
class TrainingConfig:
    case: str = "case3"
    epochs: int = field(default_factory=lambda: settings.EPOCHS)
    batch_size: int = field(default_factory=lambda: settings.BATCH_SIZE)
    train_set_size: int = field(default_factory=lambda: settings.TRAIN_SET_SIZE)
    learning_rate: float = field(default_factory=lambda: settings.LEARNING_RATE)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    resample_each_epoch: bool = False
    anneal: Optional[AnnealConfig] = None

    def validate(self):
        if self.case not in CASES:
            raise ConfigError(f"training.case must be one of {CASES}, got {self.case!r}")
        if self.epochs < 0:
            raise ConfigError("training.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("training.batch_size must be >= 1")
        if self.train_set_size < 1:
            raise ConfigError("training.train_set_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("training.learning_rate must be positive")
        if self.anneal is not None:
            self.anneal.validate()


@dataclass
class ProblemConfig:
    kind: str = "linear-gaussian"
    dim_x: int = 2
    dim_y: int = 2
    sigma_y: float = 0.5
    sigma_x: float = 0.1
    observation: Optional[List[float]] = None
    # linear-gaussian: forward matrix A (m x d), prior mean / covariance
    forward_matrix: Optional[List[List[float]]] = None
    prior_mean: Optional[List[float]] = None
    prior_cov: Optional[List[List[float]]] = None
    dynamics_matrix: Optional[List[List[float]]] = None
    n_steps: int = 5
    steps_per_unit_time: int = 100
    # clv / lorenz96: time between observations (None: 1 for clv, 0.1 for lorenz96)
    obs_interval: Optional[float] = None
    forcing: float = 8.0
    clip_nonnegative: bool = False
    noise_free: bool = False

    def validate(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"problem.kind must be one of {PROBLEM_KINDS}, got {self.kind!r}")
        if self.dim_x < 1 or self.dim_y < 1:
            raise ConfigError("problem.dim_x and problem.dim_y must be >= 1")
        if self.sigma_y <= 0:
            raise ConfigError("problem.sigma_y must be positive")
        if self.sigma_x < 0:
            raise ConfigError("problem.sigma_x must be >= 0")
        if self.steps_per_unit_time < 1:
            raise ConfigError("problem.steps_per_unit_time must be >= 1")
        if self.n_steps < 1:
            raise ConfigError("problem.n_steps must be >= 1")
        if self.obs_interval is not None and self.obs_interval <= 0:
            raise ConfigError("problem.obs_interval must be positive")
        if self.kind == "lorenz96" and self.dim_x < 4:
            raise ConfigError("lorenz96 needs problem.dim_x >= 4")
        if self.kind in ("clv", "lorenz96") and self.dim_y > self.dim_x:
            raise ConfigError("problem.dim_y cannot exceed problem.dim_x")


PROBLEM_PRESETS = {
    "linear-gaussian": {},
    # four competing species, first three observed, ten unit-time observations
    "clv": {"dim_x": 4, "dim_y": 3, "sigma_x": 1e-2, "sigma_y": 1e-1, "n_steps": 10},
    # desk-scale Lorenz96 (d=8) observed through log-Rosenbrock, one step of length 1/10
    "lorenz96": {"dim_x": 8, "dim_y": 7, "sigma_x": 1e-1, "sigma_y": 1e-1, "n_steps": 1},
}


def problem_preset(kind: str, **overrides) -> "ProblemConfig":
    if kind not in PROBLEM_PRESETS:
        raise ConfigError(f"Unknown problem kind {kind!r}")
    values = dict(PROBLEM_PRESETS[kind], kind=kind)
    values.update(overrides)
    preset = ProblemConfig(**values)
    preset.validate()
    return preset


@dataclass
class FilterConfig:
    n_particles: int = 4000
    warm_fraction: float = 0.2
    case: str = "case3"
    track_index: Optional[int] = None
    reference_particles: int = 100000

    def validate(self):
        if self.n_particles < 2:
            raise ConfigError("filter.n_particles must be >= 2")
        if self.reference_particles < 2:
            raise ConfigError("filter.reference_particles must be >= 2")
        if not 0.0 < self.warm_fraction <= 1.0:
            raise ConfigError("filter.warm_fraction must lie in (0, 1]")
        if self.case not in ("case1", "case3"):
            raise ConfigError("filter.case must be 'case1' or 'case3'")


@dataclass
class OutputConfig:
    directory: str = field(default_factory=lambda: settings.OUTPUT_DIR)
    n_out: int = field(default_factory=lambda: settings.N_OUT)

    def validate(self):
        if self.n_out < 1:
            raise ConfigError("output.n_out must be >= 1")


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)

    def validate(self) -> "RunConfig":
        self.problem.validate()
        self.architecture.validate()
        self.training.validate()
        self.output.validate()
        self.filter.validate()
        return self


def _build_section(cls, name: str, raw) -> object:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"Section '{name}' must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"Unknown keys in section '{name}': {sorted(unknown)}")
    values = dict(raw)
    if cls is TrainingConfig and values.get("anneal") is not None:
        anneal = values["anneal"]
        if not isinstance(anneal, dict) or set(anneal) != {"initial", "factor"}:
            raise ConfigError("training.anneal must be an object with keys 'initial' and 'factor'")
        values["anneal"] = AnnealConfig(float(anneal["initial"]), float(anneal["factor"]))
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid section '{name}': {e}") from e


def parse_run_config(raw: Dict) -> RunConfig:
    """Build a validated RunConfig from an already-decoded JSON document"""
    if not isinstance(raw, dict):
        raise ConfigError("Run configuration must be a JSON object")
    sections = {"problem", "architecture", "training", "output", "filter"}
    unknown = set(raw) - sections
    if unknown:
        raise ConfigError(f"Unknown configuration sections: {sorted(unknown)}")
    try:
        config = RunConfig(
            problem=_build_section(ProblemConfig, "problem", raw.get("problem")),
            architecture=_build_section(ArchitectureConfig, "architecture", raw.get("architecture")),
            training=_build_section(TrainingConfig, "training", raw.get("training")),
            output=_build_section(OutputConfig, "output", raw.get("output")),
            filter=_build_section(FilterConfig, "filter", raw.get("filter")),
        )
        return config.validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration value: {e}") from e


def load_run_config(path: Optional[str]) -> RunConfig:
    """Load the JSON run configuration at `path`; None gives the defaults"""
    if path is None:
        return RunConfig().validate()
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, "r") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    return parse_run_config(raw)
