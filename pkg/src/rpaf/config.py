"""Flat JSON key-value configuration shared by simulator and trainer."""
from __future__ import annotations

import dataclasses
import json


class ConfigError(Exception):
    """Invalid or inconsistent configuration."""


METHODS = ("greedy", "all-realtime", "oracle-myopic", "rpaf-nopool", "rpaf")
BACKBONES = ("ddpg", "td3")
PENALTIES = ("mse", "kl", "none")


@dataclasses.dataclass
class TrainConfig:
    actor_lr: float = 0.0001
    critic_lr: float = 0.0002
    gamma: float = 0.9
    tau: float = 0.005
    alpha: float = 1.0
    batch_size: int = 256
    replay_buffer_size: int = 100_000
    hidden_width: int = 64
    num_layers: int = 5
    policy_delay: int = 2
    smoothing_std: float = 0.1
    smoothing_clip: float = 0.2
    epochs: int = 30
    collect_hours: int = 24
    train_steps_per_epoch: int = 200

    def validate(self):
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must be in (0, 1]")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.batch_size <= 0 or self.replay_buffer_size < self.batch_size:
            raise ConfigError("need replay_buffer_size >= batch_size > 0")
        if self.num_layers < 2:
            raise ConfigError("num_layers must be >= 2")
        if self.policy_delay <= 0:
            raise ConfigError("policy_delay must be positive")
        if self.epochs <= 0 or self.collect_hours <= 0:
            raise ConfigError("epochs and collect_hours must be positive")
        if self.train_steps_per_epoch <= 0:
            raise ConfigError("train_steps_per_epoch must be positive")
        return self


@dataclasses.dataclass
class ExperimentConfig:
    sim: "SimConfig"
    train: TrainConfig
    method: str = "rpaf"
    backbone: str = "td3"
    penalty: str = "mse"
    trials: int = 20
    eta: float = 0.001
    out_dir: str = "runs"

    def validate(self):
        self.sim.validate()
        self.train.validate()
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; "
                              f"expected one of {METHODS}")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.penalty not in PENALTIES:
            raise ConfigError(f"unknown penalty {self.penalty!r}")
        if self.trials <= 0:
            raise ConfigError("trials must be positive")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError("eta must be in (0, 1)")
        return self


def _field_names(cls):
    return {f.name for f in dataclasses.fields(cls)}


def load_config(path=None, overrides=None):
    """Build an ExperimentConfig from a flat JSON object.

    Keys map onto SimConfig, TrainConfig or the experiment fields by
    name; unknown keys raise ConfigError.  `overrides` (e.g. parsed CLI
    flags) take precedence over file values.
    """
    from .simulator import SimConfig  # deferred: simulator imports ConfigError

    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    if overrides:
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}

    sim_keys = _field_names(SimConfig)
    train_keys = _field_names(TrainConfig)
    exp_keys = {"method", "backbone", "penalty", "trials", "eta", "out_dir"}
    sim_kwargs, train_kwargs, exp_kwargs = {}, {}, {}
    for key, value in raw.items():
        if key in sim_keys:
            sim_kwargs[key] = value
        elif key in train_keys:
            train_kwargs[key] = value
        elif key in exp_keys:
            exp_kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        cfg = ExperimentConfig(sim=SimConfig(**sim_kwargs),
                               train=TrainConfig(**train_kwargs), **exp_kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
