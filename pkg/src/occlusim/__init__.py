"""Occlusion-aware 2D driving simulator with a primitive-level decision stack:
visibility-polygon observations, polyline encoding, semantic motion primitives,
risk-checked execution, PPO training, and non-learned baselines."""

__version__ = "0.1.0"

from .env import Env, EnvConfig, StepResult
from .harness import MetricsSummary, evaluate, make_policy
from .net import PolicyParams
from .rl import PpoConfig, train
from .scenario import Scenario, ScenarioConfig, build

__all__ = [
    "Env", "EnvConfig", "StepResult", "MetricsSummary", "evaluate",
    "make_policy", "PolicyParams", "PpoConfig", "train", "Scenario",
    "ScenarioConfig", "build",
]
