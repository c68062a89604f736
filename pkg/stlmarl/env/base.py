from abc import abstractmethod
from typing import Dict, List, Optional

import gymnasium as gym
import numpy as np

from ..stl import Formula, FormulaConfig, parse_formula

class EnvironmentConfigError(ValueError):
    pass

class PlacementError(ValueError):
    pass


class MultiAgentEnv(gym.Env):
    """
    Common surface of the simulated worlds. Observations are arrays of shape
    `(n_agents, obs_dim)`, actions one discrete index per agent, and the
    per-agent reward returned by `step` is the environment's baseline reward.
    After every step `channels()` describes the reached state as one trace row
    and `collisions` lists the collision events of that step.
    """
    n_agents: int
    obs_dim: int
    n_actions: int
    episode_length: int
    dt: float
    formula_config: FormulaConfig
    collisions: List[tuple]

    @property
    def state_dim(self) -> int:
        return self.n_agents * self.obs_dim

    def global_state(self, obs: np.ndarray) -> np.ndarray:
        """The centralized critic input: all local observations concatenated."""
        return np.asarray(obs, dtype=np.float64).reshape(-1)

    def formulas(self) -> List[List[Formula]]:
        """Per-agent lists of parsed specifications."""
        return [[parse_formula(text) for text in texts] for texts in self.formula_texts()]

    @abstractmethod
    def formula_texts(self) -> List[List[str]]:
        ...

    @abstractmethod
    def channel_names(self) -> List[str]:
        ...

    @abstractmethod
    def channels(self) -> Dict[str, float]:
        ...

    @abstractmethod
    def reached(self) -> np.ndarray:
        ...

    @abstractmethod
    def layout(self) -> str:
        ...

    def agent_collisions(self) -> np.ndarray:
        """Number of collision events of the last step each agent was involved in."""
        counts = np.zeros(self.n_agents, dtype=np.int64)
        for event in self.collisions:
            for agent in event:
                if agent is not None:
                    counts[agent] += 1
        return counts

    @abstractmethod
    def step(self, actions, controls: Optional[np.ndarray] = None):
        ...
