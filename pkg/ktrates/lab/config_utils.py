import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..config import DEFAULT_C, LB_MARGIN, MAX_WORKERS, OUT_DIR, SEED
from ..errors import UsageError

logger = logging.getLogger(__name__)

COMMANDS = ("curves", "bounds", "counterexample", "fit", "oracle")
CHECKS = (
    "resolvent_upper",
    "lower_envelope",
    "mlog_upper",
    "minv_upper",
    "ritt",
    "dichotomy",
    "normal_log",
    "poly_bounds",
    "hilbert",
    "factorial_witness",
    "q_power",
)
DEFAULT_CHECKS = ["resolvent_upper", "lower_envelope", "mlog_upper", "ritt", "dichotomy"]


def _split(value):
    if value is None or isinstance(value, (list, tuple)):
        return value
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [value]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OperatorSection(_Section):
    name: str
    space: Optional[str] = None
    params: Dict[str, str] = Field(default_factory=dict)

    @field_validator("params", mode="before")
    @classmethod
    def stringify(cls, value):
        if value is None:
            return {}
        return {k: ", ".join(str(x) for x in v) if isinstance(v, (list, tuple)) else str(v) for k, v in value.items()}

    def build_params(self) -> Dict[str, str]:
        params = dict(self.params)
        if self.space is not None:
            params["space"] = self.space
        return params


class RangesSection(_Section):
    n_max: int = 4096
    n_min: int = 0
    dense_upto: int = 64
    ratio: float = 1.02
    theta_min: float = 1e-3
    theta_points: int = 400
    ray_radii: int = 32
    ray_angles: int = 128
    fit_lo: Optional[int] = None
    fit_hi: Optional[int] = None
    oracle_n: int = 1024
    oracle_ns: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    oracle_lambdas: List[str] = Field(default_factory=lambda: ["1.5", "-1.2", "1.1j", "0.5+1j"])

    @field_validator("oracle_ns", "oracle_lambdas", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split(value)

    @model_validator(mode="after")
    def check_positive(self):
        for key in ("n_max", "dense_upto", "theta_points", "ray_radii", "ray_angles", "oracle_n"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")
        if self.n_min < 0 or self.n_min > self.n_max:
            raise ValueError("n_min must lie in [0, n_max]")
        if not self.ratio > 1:
            raise ValueError("ratio must exceed 1")
        if not 0 < self.theta_min < math.pi:
            raise ValueError("theta_min must lie in (0, pi)")
        if any(n < 0 for n in self.oracle_ns):
            raise ValueError("oracle_ns must be nonnegative")
        if self.fit_lo is not None and self.fit_hi is not None and self.fit_lo >= self.fit_hi:
            raise ValueError("fit_lo must be below fit_hi")
        return self


class ChecksSection(_Section):
    include: List[str] = Field(default_factory=lambda: list(DEFAULT_CHECKS))
    c: float = DEFAULT_C
    sweep: bool = True
    b: float = 0.25
    normal_c: float = 0.5
    lb_margin: float = LB_MARGIN
    normal_s: List[int] = Field(default_factory=list)
    factorial_ks: List[int] = Field(default_factory=lambda: [2, 3, 4, 5])
    hilbert_vectors: int = 20
    oracle_tol: float = 1e-3

    @field_validator("include", "normal_s", "factorial_ks", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split(value)

    @field_validator("include")
    @classmethod
    def known_checks(cls, value):
        unknown = [v for v in value if v not in CHECKS]
        if unknown:
            raise ValueError(f"unknown checks {unknown}; valid: {', '.join(CHECKS)}")
        return value

    @field_validator("c")
    @classmethod
    def c_range(cls, value):
        if not 0 < value < 1:
            raise ValueError(f"c must lie in (0, 1), got {value}")
        return value

    @model_validator(mode="after")
    def check_positive(self):
        if self.b <= 0 or self.normal_c <= 0 or self.lb_margin <= 0 or self.oracle_tol <= 0 or self.hilbert_vectors <= 0:
            raise ValueError("b, normal_c, lb_margin, hilbert_vectors and oracle_tol must be positive")
        return self


class CounterexampleSection(_Section):
    alpha: float = 3.0
    beta: Optional[float] = None
    n0: List[int] = Field(default_factory=lambda: [10, 100, 1000])
    ells: List[int] = Field(default_factory=lambda: [50, 100, 200])
    oracle_ells: List[int] = Field(default_factory=lambda: [10, 20, 30])
    admissible: bool = False
    angles: int = 96
    uniform: int = 32
    radii: int = 48

    @field_validator("n0", "ells", "oracle_ells", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split(value)

    @model_validator(mode="after")
    def check_ranges(self):
        if not self.alpha > 2:
            raise ValueError(f"counterexample alpha must exceed 2, got {self.alpha}")
        if any(n <= 0 for n in self.n0) or any(e < 3 for e in self.ells + self.oracle_ells):
            raise ValueError("n0 must be positive and every ell at least 3")
        if min(self.angles, self.uniform, self.radii) <= 0:
            raise ValueError("grid densities must be positive")
        return self


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Literal["curves", "bounds", "counterexample", "fit", "oracle"]
    alpha: float = 1.0
    seed: int = SEED
    output_dir: str = OUT_DIR
    max_workers: int = MAX_WORKERS
    operator: Optional[OperatorSection] = None
    ranges: RangesSection = Field(default_factory=RangesSection)
    checks: ChecksSection = Field(default_factory=ChecksSection)
    counterexample: CounterexampleSection = Field(default_factory=CounterexampleSection)

    @model_validator(mode="after")
    def required_fields(self):
        if self.command != "counterexample" and self.operator is None:
            raise ValueError(f"command '{self.command}' needs an [operator] section with a name")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.max_workers <= 0:
            raise ValueError("max_workers must be positive")
        return self


SECTIONS = {
    "operator": OperatorSection,
    "ranges": RangesSection,
    "checks": ChecksSection,
    "counterexample": CounterexampleSection,
}
TOP_LEVEL = ("command", "alpha", "seed", "output_dir", "max_workers")


def _read_lines(text: str) -> Dict[str, Any]:
    data: Dict[str, Any] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in SECTIONS:
                raise UsageError(f"line {lineno}: unknown section [{current}]; valid: {', '.join(SECTIONS)}")
            data.setdefault(current, {})
            continue
        if "=" not in line:
            raise UsageError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        target = data if current is None else data[current]
        if key in target:
            raise UsageError(f"line {lineno}: duplicate key '{key}'")
        target[key] = value
    return data


def _check_keys(data: Dict[str, Any]):
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise UsageError(f"[{key}] must be a section")
            if key == "operator":
                continue
            valid = list(SECTIONS[key].model_fields)
            unknown = sorted(set(value) - set(valid))
            if unknown:
                raise UsageError(f"unknown key(s) {unknown} in [{key}]; valid keys: {', '.join(valid)}")
        elif key not in TOP_LEVEL:
            raise UsageError(f"unknown key '{key}'; valid keys: {', '.join(TOP_LEVEL)} or a section")
    if "command" not in data:
        raise UsageError("missing required key 'command'")
    operator = data.get("operator")
    if operator is not None:
        if "name" not in operator:
            raise UsageError("missing required key 'name' in [operator]")
        nested = operator.pop("params", None) or {}
        extra = {k: operator.pop(k) for k in list(operator) if k not in ("name", "space")}
        operator["params"] = {**nested, **extra}


def _validate(data: Dict[str, Any]) -> ExperimentConfig:
    _check_keys(data)
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise UsageError(f"invalid config: {e}") from e


def parse_config(text: str, fmt: str = "ini", overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Parse the line-oriented key = value format (or YAML) into a validated config."""
    if fmt == "yaml":
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise UsageError(f"malformed YAML config: {e}") from e
        if not isinstance(data, dict):
            raise UsageError("a YAML config must be a mapping")
    elif fmt == "ini":
        data = _read_lines(text)
    else:
        raise UsageError(f"Unknown config format: {fmt}")
    for key, value in (overrides or {}).items():
        if value is not None:
            if key in data and data[key] != value:
                logger.info(f"Overriding config {key}={data[key]!r} with {value!r}")
            data[key] = value
    return _validate(data)


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    path = Path(path)
    fmt = "yaml" if path.suffix.lower() in (".yaml", ".yml") else "ini"
    text = path.read_text(encoding="utf-8")
    logger.info(f"Loaded {fmt} config from {path}")
    return parse_config(text, fmt, overrides)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def emit_config(config: ExperimentConfig) -> str:
    """Inverse of parse_config for the line-oriented format."""
    lines = [f"{key} = {_format(getattr(config, key))}" for key in TOP_LEVEL]
    if config.operator is not None:
        lines += ["", "[operator]", f"name = {config.operator.name}"]
        if config.operator.space is not None:
            lines.append(f"space = {config.operator.space}")
        lines += [f"{k} = {v}" for k, v in sorted(config.operator.params.items())]
    for name in ("ranges", "checks", "counterexample"):
        section = getattr(config, name)
        lines += ["", f"[{name}]"]
        for key in type(section).model_fields:
            value = getattr(section, key)
            if value is None:
                continue
            lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


def dump_config_yaml(config: ExperimentConfig, path: Union[str, Path]):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(), f, sort_keys=True, default_flow_style=False)
