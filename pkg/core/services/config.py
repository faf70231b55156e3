"""
Experiment configuration files.

Flat `key=value` text, parsed with python-dotenv (comments start with `#`).
Keys mirror ModelConfig and TrainerConfig; missing keys keep the defaults.

    # desk-scale model
    d_model=64
    n_layers=2
    lr=0.001
    batch_size=8
"""
from dataclasses import fields
from typing import Dict, Optional, Tuple

from dotenv import dotenv_values

from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainerConfig

MODEL_KEYS = {item.name: item.type for item in fields(ModelConfig)}
TRAINER_KEYS = {item.name: item.type for item in fields(TrainerConfig) if item.name != 'seed'}


def _coerce(key: str, raw: Optional[str], kind) -> object:
    if raw is None:
        raise ConfigError(f"Config key {key!r} has no value")
    try:
        if kind in (int, 'int'):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"Config key {key!r}: cannot parse {raw!r}") from exc


def parse_experiment_values(values: Dict[str, Optional[str]],
                            seed: Optional[int] = None) -> Tuple[ModelConfig, TrainerConfig]:
    """Build both configs from already-split key/value pairs."""
    model_kwargs, trainer_kwargs = {}, {}
    for key, raw in values.items():
        if key in MODEL_KEYS:
            model_kwargs[key] = _coerce(key, raw, MODEL_KEYS[key])
        elif key in TRAINER_KEYS:
            trainer_kwargs[key] = _coerce(key, raw, TRAINER_KEYS[key])
        else:
            raise ConfigError(f"Unknown config key {key!r}")
    if seed is not None:
        model_kwargs['seed'] = seed
    if 'seed' in model_kwargs:
        trainer_kwargs['seed'] = model_kwargs['seed']
    try:
        return ModelConfig(**model_kwargs), TrainerConfig(**trainer_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_experiment_config(path=None, seed: Optional[int] = None) -> Tuple[ModelConfig, TrainerConfig]:
    """
    Read a key=value config file (or only defaults when path is None).

    Args:
        path: config file
        seed: overrides the file's seed for both the model init and the shuffle

    Raises:
        ConfigError: unknown key or bad value
        OSError: unreadable file
    """
    values: Dict[str, Optional[str]] = {}
    if path is not None:
        with open(path, encoding='utf-8') as handle:
            values = dict(dotenv_values(stream=handle))
    return parse_experiment_values(values, seed=seed)


def dump_experiment_config(model_config: ModelConfig, trainer_config: TrainerConfig) -> str:
    """Serialise both configs in the format load_experiment_config reads."""
    lines = [f"{name}={getattr(model_config, name)}" for name in MODEL_KEYS]
    lines += [f"{name}={getattr(trainer_config, name)}" for name in TRAINER_KEYS]
    return "\n".join(lines) + "\n"
