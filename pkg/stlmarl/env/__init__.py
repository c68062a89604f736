from typing import Literal, Optional

from ..stl import FormulaConfig
from . import lane, particle
from .base import *
from .lane import LaneConfig, LaneEnv, LaneWorldState, VehicleState, action_to_control
from .particle import ACTIONS, ParticleConfig, ParticleEnv, ParticleState

ENVIRONMENTS = dict(particle=(ParticleConfig, ParticleEnv), lane=(LaneConfig, LaneEnv))

def make_env(
    name: Literal["particle", "lane"],
    config: Optional[ParticleConfig | LaneConfig] = None,
    formula: Optional[FormulaConfig] = None
) -> MultiAgentEnv:
    if name not in ENVIRONMENTS:
        raise EnvironmentConfigError(f"Unknown environment '{name}', expected one of {list(ENVIRONMENTS)}!")
    config_class, env_class = ENVIRONMENTS[name]
    return env_class(config or config_class(), formula)
