"""Run configuration: defaults < TOML file < ``LRPKT_*`` env vars < CLI flags.

The TOML file may group keys in tables (``[train]``, ``[model]``...);
tables are flattened, so every key must be a :class:`RunConfig` field
name no matter where it appears.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, fields
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import BktParams
from .errors import ConfigError, LrpktError
from .lrp import LrpConfig
from .model import ModelConfig
from .training import TrainConfig

ENV_PREFIX = "LRPKT_"


@dataclass
class RunConfig:
    # model
    hidden_size: int = 256
    # training
    batch_size: int = 20
    dropout_rate: float = 0.5
    iterations: int = 500
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_sequence_length: int = 200
    clip_norm: float = 5.0
    seed: int = 0
    # lrp
    epsilon: float = 0.001
    delta: int = 0
    # data
    train_fraction: float = 0.8
    min_sequence_length: int = 2
    multi_skill_sep: str = "_"
    # experiments
    prefix_len: int = 14
    max_deletions: int = 10
    num_random_repeats: int = 10
    false_order: str = "by_prediction"
    orient: bool = True
    # synthetic data
    num_students: int = 2000
    questions_per_student: int = 50
    num_concepts: int = 5
    p_init: Any = 0.4
    p_learn: Any = 0.3
    p_slip: Any = 0.1
    p_guess: Any = 0.2
    latent_skill: Any = None
    items_per_concept: int = 10
    # io
    output: str = "out"

    def validate(self) -> RunConfig:
        """Check every component invariant; raises :class:`ConfigError`."""
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.prefix_len < 1:
            raise ConfigError("prefix_len must be >= 1")
        if not 0 <= self.max_deletions < self.prefix_len:
            raise ConfigError(
                f"max_deletions ({self.max_deletions}) must be smaller than prefix_len ({self.prefix_len})"
            )
        if self.num_random_repeats < 1:
            raise ConfigError("num_random_repeats must be >= 1")
        if self.false_order not in ("by_prediction", "reversed"):
            raise ConfigError(f"false_order must be 'by_prediction' or 'reversed', got {self.false_order!r}")
        try:
            self.train_config()
            self.lrp_config()
            ModelConfig(num_concepts=1, hidden_size=self.hidden_size, seed=self.seed)
        except LrpktError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def model_config(self, num_concepts: int, seed: int | None = None) -> ModelConfig:
        return ModelConfig(num_concepts, self.hidden_size, self.seed if seed is None else seed)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            dropout_rate=self.dropout_rate,
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            seed=self.seed if seed is None else seed,
            max_sequence_length=self.max_sequence_length,
            clip_norm=self.clip_norm if self.clip_norm > 0 else None,
        )

    def lrp_config(self) -> LrpConfig:
        return LrpConfig(epsilon=self.epsilon, delta=self.delta)

    def bkt_params(self) -> BktParams:
        M = self.num_concepts
        if M < 1:
            raise ConfigError("num_concepts must be >= 1")

        def per_concept(name):
            v = getattr(self, name)
            vals = tuple(v) if isinstance(v, (list, tuple)) else (v,) * M
            if len(vals) != M:
                raise ConfigError(f"{name} needs 1 or {M} values, got {len(vals)}")
            return vals

        return BktParams(
            p_init=per_concept("p_init"),
            p_learn=per_concept("p_learn"),
            p_slip=per_concept("p_slip"),
            p_guess=per_concept("p_guess"),
            num_students=self.num_students,
            questions_per_student=self.questions_per_student,
            seed=self.seed,
            latent_skill=self.latent_skill,
            items_per_concept=self.items_per_concept,
        )


_FIELDS = {f.name: f for f in fields(RunConfig)}
_LIST_FLOAT = {"p_init", "p_learn", "p_slip", "p_guess"}


def coerce(name: str, value) -> Any:
    """Convert a TOML/env/CLI value to the field's type."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown configuration key {name!r}")
    default = _FIELDS[name].default
    try:
        if name in _LIST_FLOAT:
            if isinstance(value, str):
                parts = [float(p) for p in value.replace(" ", "").split(",") if p]
                return parts[0] if len(parts) == 1 else parts
            if isinstance(value, (list, tuple)):
                return [float(v) for v in value]
            return float(value)
        if name == "latent_skill":
            if value is None or value == "":
                return None
            if isinstance(value, str):
                return [int(p) for p in value.replace(" ", "").split(",") if p]
            return [int(v) for v in value]
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name}: {value!r}") from None


def _flatten(doc: Mapping, out: dict) -> dict:
    for key, value in doc.items():
        if isinstance(value, Mapping):
            _flatten(value, out)
        else:
            out[key.replace("-", "_")] = value
    return out


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {k: coerce(k, v) for k, v in _flatten(doc, {}).items()}


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in _FIELDS:
                out[name] = coerce(name, value)
    return out


def resolve(config_path=None, overrides: Mapping[str, Any] | None = None, environ=None) -> RunConfig:
    values: dict[str, Any] = {}
    if config_path is not None:
        values.update(load_config_file(config_path))
    values.update(env_overrides(environ))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = coerce(k, v)
    return dataclasses.replace(RunConfig(), **values)
