"""Run configuration: defaults, flat key=value files, and flag overrides.

Precedence: command-line flags > config file > environment seed > defaults.
The generation count follows the query count when left unset: Q of 1, 5, 10,
15 selects g of 5, 10, 10, 15 (other Q fall back to 10).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

SEED_ENV_VAR = "LABFEW_SEED"
AUTO_GENERATIONS = {1: 5, 5: 10, 10: 10, 15: 15}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    k_way: int = 5
    n_shot: int = 1
    q_query: int = 1
    batch_episodes: int = 2
    hidden_h: int = 96
    embed_dim: int = 128
    generations: int | None = None
    loss_gens: int = 3
    lam: float = 0.1
    beta: float = 0.1
    gamma: float = 1.0
    gamma_mode: str = "constant"
    lr: float = 1e-3
    train_iters: int = 2000
    eval_episodes: int = 500
    seed: int = 0
    dataset: str = "synthetic"
    norm_mode: str = "scaled"
    image_size: int = 84
    classes: int = 20
    per_class: int = 50
    synth_val_classes: int | None = None
    synth_test_classes: int | None = None
    val_every: int = 50
    val_episodes: int = 50
    early_stop_acc: float | None = None
    eval_batch: int = 4
    eval_workers: int = 1
    out_dir: str = "runs/default"
    checkpoint: str | None = None
    metrics: str | None = None

    def resolved_generations(self) -> int:
        if self.generations is not None:
            return self.generations
        return AUTO_GENERATIONS.get(self.q_query, 10)

    def validate(self) -> "RunConfig":
        if self.k_way < 2:
            raise ConfigError(f"k_way must be >= 2, got {self.k_way}")
        if self.n_shot < 1 or self.q_query < 1 or self.batch_episodes < 1:
            raise ConfigError("n_shot, q_query, batch_episodes must be >= 1")
        g = self.resolved_generations()
        if g < 1:
            raise ConfigError(f"generations must be >= 1, got {g}")
        if self.loss_gens < 1 or self.loss_gens > g:
            raise ConfigError(
                f"loss_gens must lie in [1, generations={g}], got {self.loss_gens}"
            )
        if min(self.lam, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.gamma_mode not in ("constant", "ramp"):
            raise ConfigError(f"gamma_mode must be constant or ramp, got {self.gamma_mode}")
        if self.norm_mode not in ("raw", "scaled"):
            raise ConfigError(f"norm_mode must be raw or scaled, got {self.norm_mode}")
        if self.dataset != "synthetic" and not Path(self.dataset).is_dir():
            raise ConfigError(f"dataset is neither 'synthetic' nor a directory: {self.dataset}")
        if self.hidden_h < 1 or self.embed_dim < 1:
            raise ConfigError("hidden_h and embed_dim must be positive")
        if self.eval_workers < 1:
            raise ConfigError("eval_workers must be >= 1")
        return self

    @property
    def metrics_path(self) -> Path:
        return Path(self.metrics) if self.metrics else Path(self.out_dir) / "metrics.jsonl"

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "checkpoint.mlab"


_PARSERS = {
    int: int,
    float: float,
    str: str,
    "int | None": lambda s: None if s.lower() in ("none", "") else int(s),
    "float | None": lambda s: None if s.lower() in ("none", "") else float(s),
    "str | None": lambda s: None if s.lower() in ("none", "") else s,
}


def field_parser(f):
    if f.type in ("int", int):
        return int
    if f.type in ("float", float):
        return float
    if f.type in ("str", str):
        return str
    if f.type in _PARSERS:
        return _PARSERS[f.type]
    raise KeyError(f"no parser for config field {f.name}: {f.type}")


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; '#' starts a comment."""
    values = {}
    known = {f.name: f for f in fields(RunConfig)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = field_parser(known[key])(value)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return values


def build_config(file_path=None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, optional file, environment seed, and flag overrides."""
    cfg = RunConfig()
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"bad {SEED_ENV_VAR} value {env_seed!r}") from e
    if file_path is not None:
        for k, v in parse_config_file(file_path).items():
            setattr(cfg, k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()
