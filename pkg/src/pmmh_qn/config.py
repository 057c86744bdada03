"""
Run configuration: schema, defaults and a YAML loader that reports the line
of every invalid or unknown key.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

MODELS = ("gaussian", "random_effects", "logistic", "stochastic_volatility")
METHODS = ("pmMH0", "pmMH1", "pmMH2", "SR1", "LS", "BFGS")
QN_METHODS = ("SR1", "LS", "BFGS")

# Initial step sizes and target acceptance rates used for the three studies.
STEP_DEFAULTS = {
    ("random_effects", "BFGS"): 0.1,
    ("random_effects", "LS"): 0.15,
    ("random_effects", "SR1"): 0.25,
    ("logistic", "pmMH0"): 0.27,
    ("logistic", "pmMH2"): 0.5,
    ("stochastic_volatility", "pmMH2"): 0.8,
}
QN_STEP_DEFAULT = 0.1
ALPHA_STAR_DEFAULTS = {"BFGS": 0.2, "LS": 0.2, "SR1": 0.3}
DELTA_DEFAULTS = {
    "gaussian": 1.0,
    "random_effects": 0.1,
    "logistic": 0.01,
    "stochastic_volatility": [0.01, 0.01, 0.01, 0.001],
}
N_DEFAULTS = {"random_effects": 100, "stochastic_volatility": 75}


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass
class RunConfig:
    model: str = "random_effects"
    data: dict = field(default_factory=dict)
    method: str = "LS"
    K: int = 30000
    burnin: int = 3000
    M: int = 20
    sigma_u: float = 0.05
    step_size: Optional[float] = None
    eta: float = 0.5
    alpha_star: Optional[float] = None
    delta: Any = None
    lam: float = 0.1
    lambda_min: float = 1e-6
    h0_scale: float = 0.01
    N: Optional[int] = None
    lag: int = 10
    rescale: bool = True
    score: str = "fisher"
    adapt: Optional[bool] = None
    proposal_cov: Any = None
    theta0: Optional[list] = None
    seed: int = 0
    replicates: int = 1
    output_dir: str = "output"
    sweep: dict = field(default_factory=dict)
    hessian_study: dict = field(default_factory=dict)
    benchmark: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.K > self.burnin >= self.M >= 2:
            raise ConfigError(f"need K > burnin >= M >= 2, got K={self.K}, "
                              f"burnin={self.burnin}, M={self.M}")
        if not 0.0 <= self.sigma_u <= 1.0:
            raise ConfigError(f"sigma_u must lie in [0, 1], got {self.sigma_u}")
        for name in ("eta",):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        for name in ("lambda_min", "h0_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError("step_size must be positive")
        if self.alpha_star is not None and not 0.0 < self.alpha_star < 1.0:
            raise ConfigError("alpha_star must lie in (0, 1)")
        if self.N is not None and self.N < 1:
            raise ConfigError("N must be positive")
        if self.lag < 0:
            raise ConfigError("lag must be non-negative")
        if self.replicates < 1:
            raise ConfigError("replicates must be positive")
        if self.score not in ("fisher", "pathwise"):
            raise ConfigError("score must be 'fisher' or 'pathwise'")

    # resolved tuning constants

    @property
    def is_qn(self):
        return self.method in QN_METHODS

    @property
    def initial_step(self):
        if self.step_size is not None:
            return self.step_size
        default = QN_STEP_DEFAULT if self.is_qn else 1.0
        return STEP_DEFAULTS.get((self.model, self.method), default)

    @property
    def target_acceptance(self):
        if self.alpha_star is not None:
            return self.alpha_star
        return ALPHA_STAR_DEFAULTS.get(self.method, 0.25)

    @property
    def adapt_step(self):
        return self.is_qn if self.adapt is None else self.adapt

    @property
    def init_delta(self):
        return DELTA_DEFAULTS[self.model] if self.delta is None else self.delta

    @property
    def n_particles(self):
        return self.N if self.N is not None else N_DEFAULTS.get(self.model)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


BLOCK_KEYS = {
    "data": {"path", "synthetic", "seed", "rows", "covariates", "mean", "cov"},
    "sweep": {"M_values", "sigma_u_values"},
    "hessian_study": {"M_values", "K", "replicates", "stride", "methods"},
    "benchmark": {"methods", "overrides", "pilot"},
}
SYNTHETIC_KEYS = {"T", "mu", "sigma", "p", "beta", "beta_scale", "params"}
PILOT_KEYS = {"method", "K", "burnin", "step_size", "adapt"}

_FIELD_TYPES = {
    "model": str, "data": dict, "method": str, "K": int, "burnin": int, "M": int,
    "sigma_u": float, "step_size": float, "eta": float, "alpha_star": float,
    "delta": "scale", "lam": float, "lambda_min": float, "h0_scale": float, "N": int,
    "lag": int, "rescale": bool, "score": str, "adapt": bool, "proposal_cov": "scale",
    "theta0": list, "seed": int, "replicates": int, "output_dir": str, "sweep": dict,
    "hessian_study": dict, "benchmark": dict,
}


def _coerce(key, value, line):
    kind = _FIELD_TYPES[key]
    if value is None:
        return None
    if kind == "scale":
        if isinstance(value, (int, float, list)) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{key} must be a number or a list", line)
    if kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key} must be a number, got {value!r}", line)
    if kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{key} must be an integer, got {value!r}", line)
    if not isinstance(value, kind):
        raise ConfigError(f"{key} must be of type {kind.__name__}, got {value!r}", line)
    return value


def parse_config(text):
    """Parse YAML text into a :class:`RunConfig`; unknown keys are errors."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", mark.line + 1 if mark else None) from None
    if root is None:
        raise ConfigError("configuration is empty")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("configuration must be a mapping", root.start_mark.line + 1)
    values = yaml.safe_load(text)
    kwargs = {}
    lines = {}
    for key_node, value_node in root.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}", line)
        if key in kwargs:
            raise ConfigError(f"duplicate key {key!r}", line)
        kwargs[key] = _coerce(key, values[key], line)
        lines[key] = line
        if key in BLOCK_KEYS and isinstance(value_node, yaml.MappingNode):
            _check_block(key, value_node, BLOCK_KEYS[key])
    try:
        return RunConfig(**{k: v for k, v in kwargs.items() if v is not None})
    except ConfigError as exc:
        # attribute the failure to the first key named in the message
        for key, line in lines.items():
            if key in str(exc):
                raise ConfigError(str(exc), line) from None
        raise


def _check_block(name, node, allowed):
    for key_node, value_node in node.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {name}", line)
        if not isinstance(value_node, yaml.MappingNode):
            continue
        if name == "data" and key == "synthetic":
            _check_block("data.synthetic", value_node, SYNTHETIC_KEYS)
        elif name == "benchmark" and key == "pilot":
            _check_block("benchmark.pilot", value_node, PILOT_KEYS)
        elif name == "benchmark" and key == "overrides":
            for method_node, fields in value_node.value:
                if method_node.value not in METHODS:
                    raise ConfigError(f"unknown method {method_node.value!r} in overrides",
                                      method_node.start_mark.line + 1)
                if isinstance(fields, yaml.MappingNode):
                    _check_block("benchmark.overrides", fields, set(_FIELD_TYPES) - set(BLOCK_KEYS))


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(config):
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
