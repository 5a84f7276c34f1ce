from .buffer import ReplayBuffer
from .networks import QNetwork, SquashedPolicy
from .sac import (
    AgentBundle,
    LossReport,
    TrainConfig,
    TrainingDivergenceError,
    act,
    make_bundle,
    policy_fn,
    soft_update,
    train,
    update,
)
