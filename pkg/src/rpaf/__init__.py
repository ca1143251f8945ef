"""Cache-allocation workbench: an actor-critic prediction stage that
emits relaxed admission ratios, a streaming rank-based allocation
stage, and a seeded recommender simulator to exercise them under
strict per-period budgets."""

from .allocation import (BACKEND, AllRealtimeAllocator, BudgetLedger,
                         GreedyAllocator, PoolRankAllocator, RankIndex,
                         ThresholdAllocator, batch_oracle, bucketize)
from .config import (BACKBONES, METHODS, PENALTIES, ConfigError,
                     ExperimentConfig, TrainConfig, load_config)
from .experiment import (HourlyMetrics, run_collect_train, run_evaluate,
                         run_horizon, watchtime_per_user)
from .prediction import (DDPGTrainer, ReplayBuffer, TD3Trainer, Transition,
                         compute_target_ratio, make_trainer, penalty)
from .properties import run_property_checks
from .simulator import SimConfig, Simulation

__version__ = "0.1.0"

__all__ = [
    "AllRealtimeAllocator", "BACKEND", "BACKBONES", "BudgetLedger",
    "ConfigError", "DDPGTrainer", "ExperimentConfig", "GreedyAllocator",
    "HourlyMetrics", "METHODS", "PENALTIES", "PoolRankAllocator",
    "RankIndex", "ReplayBuffer", "SimConfig", "Simulation", "TD3Trainer",
    "ThresholdAllocator", "TrainConfig", "Transition", "batch_oracle",
    "bucketize", "compute_target_ratio", "load_config", "make_trainer",
    "penalty", "run_collect_train", "run_evaluate", "run_horizon",
    "run_property_checks", "watchtime_per_user",
]
