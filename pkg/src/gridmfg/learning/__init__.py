"""Training environment, tabulated policies and the two learners."""
from .env import EnvState, StateKey, TrainEnv, env_step
from .policy import Policy, act, sample_actions, total_variation
from .qlearning import QLearner, QParams, train_q

__all__ = [
    "EnvState", "StateKey", "TrainEnv", "env_step", "Policy", "act", "sample_actions",
    "total_variation", "QLearner", "QParams", "train_q",
]
