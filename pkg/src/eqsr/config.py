"""Flat key=value run configuration for the benchmark runner.

Config files hold one ``namespace.key = value`` assignment per line with
``#`` comments; values are parsed as bool/int/float where possible.  Every
key has a default, so an empty file is a valid config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, object] = {
    "run.benchmark": "log-linear",
    "run.algorithm": "mcts",  # mcts | egg-mcts | drl | egg-drl
    "run.seed": 0,
    "run.noise_std": 0.0,
    "run.rule_categories": "commutative,log-exp,trig",
    "grammar.ops": "add,sub,mul,div,log,exp,sin,cos",
    "data.n_points": 2048,
    "fit.max_coeffs": 20,
    "fit.tol": 1e-6,
    "fit.max_evals": 2000,
    "fit.restarts": 4,
    "saturation.max_iter": 20,
    "saturation.max_nodes": 50000,
    "mcts.c": math.sqrt(2.0),
    "mcts.rollouts": 4,
    "mcts.max_depth": 10,
    "mcts.iterations": 200,
    "mcts.k_paths": 8,
    "drl.iterations": 200,
    "drl.batch": 1024,
    "drl.lr": 0.009,
    "drl.entropy_weight": 0.03,
    "drl.entropy_gamma": 0.7,
    "drl.k": 8,
    "drl.baseline": "mean",
    "policy.max_len": 20,
    "run.early_stop_nmse": 1e-8,
    "run.topk": 10,
}

ALGORITHMS = ("mcts", "egg-mcts", "drl", "egg-drl")


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


@dataclass
class RunConfig:
    values: dict[str, object]

    @classmethod
    def from_file(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = dict(DEFAULTS)
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                for lineno, raw in enumerate(fh, 1):
                    line = raw.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                    key, _, value = line.partition("=")
                    key = key.strip()
                    if key not in DEFAULTS:
                        raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                    values[key] = _parse_value(value)
        if overrides:
            values.update(overrides)
        cfg = cls(values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self["run.algorithm"] not in ALGORITHMS:
            raise ConfigError(
                f"run.algorithm must be one of {ALGORITHMS}, got {self['run.algorithm']!r}"
            )

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def as_dict(self) -> dict:
        return dict(sorted(self.values.items()))
