"""Run configuration: defaults, ranges and the ``key=value`` file format.

One setting per line, ``#`` starts a comment, blank lines are ignored::

    # experiment A
    algorithm = fedncv
    rounds = 50
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Any, Mapping

ALGORITHMS = ("fedavg", "clientcv", "fedncv")
ALPHA_MODES = ("fixed", "descent", "closedform")
MODELS = ("logistic", "mlp1")
ACTIVATIONS = ("tanh", "relu")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "fedncv"
    clients: int = 20
    rounds: int = 100
    gamma: float = 300.0
    alpha_mode: str = "closedform"
    fixed_alpha: float = 0.5
    beta: float = 0.5
    dirichlet_concentration: float = 0.1
    num_classes: int = 10
    input_dim: int = 32
    n_samples: int = 10000
    spread: float = 0.25
    model: str = "logistic"
    hidden_dim: int = 32
    activation: str = "tanh"
    local_steps: int = 1
    seed: int = 0
    out_path: str = "metrics.csv"
    dataset_path: str = ""
    workers: int = 1
    resample: bool = False

    def replace(self, **changes) -> "RunConfig":
        return validate(dataclasses.replace(self, **changes))

    def items(self) -> list[tuple[str, Any]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


_CHOICES = {
    "algorithm": ALGORITHMS,
    "alpha_mode": ALPHA_MODES,
    "model": MODELS,
    "activation": ACTIVATIONS,
}

# inclusive lower bounds; gamma and concentration have their own checks below
_MINIMUM = {
    "clients": 1,
    "rounds": 0,
    "gamma": 0.0,
    "num_classes": 2,
    "input_dim": 1,
    "n_samples": 2,
    "spread": 0.0,
    "hidden_dim": 1,
    "local_steps": 1,
    "seed": 0,
    "workers": 1,
}

FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _convert(key: str, raw: Any) -> Any:
    kind = FIELD_TYPES[key]
    if not isinstance(raw, str):
        if kind is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if isinstance(raw, kind):
            return raw
        raise ValueError(f"expected {kind.__name__}, got {raw!r}")
    text = raw.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError(f"expected a finite number, got {text!r}")
        return value
    return text.lower() if key in _CHOICES else text


def _check(cfg: RunConfig) -> list[tuple[str, str]]:
    problems = []
    for key, choices in _CHOICES.items():
        if getattr(cfg, key) not in choices:
            problems.append((key, f"must be one of {', '.join(choices)}"))
    for key, low in _MINIMUM.items():
        if getattr(cfg, key) < low:
            problems.append((key, f"must be >= {low}"))
    if not cfg.dirichlet_concentration > 0:
        problems.append(("dirichlet_concentration", "must be > 0"))
    if not 0.0 <= cfg.fixed_alpha <= 1.0 and cfg.alpha_mode == "descent":
        problems.append(("fixed_alpha", "descent mode keeps alpha in [0, 1]"))
    if cfg.n_samples < cfg.num_classes:
        problems.append(("n_samples", "must be >= num_classes"))
    return problems


def validate(cfg: RunConfig, where: Mapping[str, str] | None = None) -> RunConfig:
    problems = _check(cfg)
    if problems:
        key, msg = problems[0]
        loc = (where or {}).get(key, "")
        raise ConfigError(f"{loc}{key}: {msg} (got {getattr(cfg, key)!r})")
    return cfg


def parse_config(text: str = "", overrides: Mapping[str, Any] | None = None, source: str = "config") -> RunConfig:
    """Parse ``key=value`` text, then apply ``overrides`` (command-line values win)."""
    values: dict[str, Any] = {}
    where: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {body!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
        where[key] = f"{source}:{lineno}: "
    for key, raw in (overrides or {}).items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"command line: {key}: {exc}") from None
        where[key] = "command line: "
    return validate(RunConfig(**values), where)


def format_config(cfg: RunConfig) -> str:
    return "\n".join(f"{k}={v}" for k, v in cfg.items())
