"""Policy-gradient control of a two-strain chemostat co-culture."""

__version__ = "0.1.0"

from .dynamics import (  # noqa: E402
    DEFAULT_INITIAL_STATE,
    IntegratorConfig,
    LightInput,
    ModelParams,
    SystemState,
    step,
)
from .policy import Architecture, PolicyParams  # noqa: E402
from .returns import ReturnConfig, preset  # noqa: E402
from .rollout import RolloutConfig, run_batch, run_episode  # noqa: E402
from .trainer import TrainConfig, train  # noqa: E402
