"""
Two-stage particle world: N agents first visit N landmarks, then cover a
second set of N landmarks while keeping their distance to each other. In the
coordination task agent i targets landmark i of each stage, in the spread
task any agent may cover any landmark.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Literal, Optional, Tuple

from gymnasium import spaces
import numpy as np
from transformers.utils import logging

from ..stl import FormulaConfig
from .base import EnvironmentConfigError, MultiAgentEnv, PlacementError

logger = logging.get_logger("transformers")

# stay, left, right, up, down
ACTIONS = np.array([[0, 0], [-1, 0], [1, 0], [0, 1], [0, -1]], dtype=np.float64)

@dataclass
class ParticleConfig:
    n_agents: int = 2
    task: Literal["coordination", "spread"] = "coordination"
    arena: float = 1.0
    dt: float = 0.1
    damping: float = 0.25
    force: float = 1.0
    mass: float = 1.0
    collision_radius: float = 0.1
    collision_penalty: float = -1.0
    c1: float = 1.0
    c2: float = 0.1
    # sign of the reward term for the landmarks of the other stage
    others_sign: float = 1.0
    episode_length: int = 25
    placement_tries: int = 1000

    def __post_init__(self):
        if self.n_agents < 1:
            raise EnvironmentConfigError(f"At least one agent is required, got {self.n_agents}!")
        if self.task not in ("coordination", "spread"):
            raise EnvironmentConfigError(f"Unknown task '{self.task}'!")
        if min(self.arena, self.dt, self.force, self.mass, self.collision_radius) <= 0 or not 0 <= self.damping < 1:
            raise EnvironmentConfigError("Arena, dt, force, mass and collision radius must be positive and damping in [0, 1)!")
        if self.episode_length < 1:
            raise EnvironmentConfigError(f"Episodes need at least one step, got {self.episode_length}!")

@dataclass
class ParticleState:
    positions: np.ndarray
    velocities: np.ndarray
    # shape (2, N, 2): stage, landmark, coordinate
    landmarks: np.ndarray
    visited: np.ndarray
    stage: int = 0
    step: int = 0


def distance_channels(state: ParticleState) -> Dict[str, float]:
    """`d_a<i>_lm<stage>_<k>` agent-landmark and `d_a<i>_a<j>` (i < j) agent-agent distances, 1-indexed."""
    n_agents = len(state.positions)
    channels = dict()
    for i in range(n_agents):
        for stage in range(2):
            for k in range(n_agents):
                channels[f"d_a{i+1}_lm{stage+1}_{k+1}"] = float(np.linalg.norm(state.positions[i] - state.landmarks[stage, k]))
    for i, j in combinations(range(n_agents), 2):
        channels[f"d_a{i+1}_a{j+1}"] = float(np.linalg.norm(state.positions[i] - state.positions[j]))
    return channels

def stl_formulas(config: ParticleConfig, formula: FormulaConfig = FormulaConfig()) -> Tuple[List[List[str]], List[str]]:
    """
    Per-agent specifications: visit the first-stage targets, eventually keep
    covering the second-stage targets for `formula.hold` steps, reach no
    second-stage target before the first-stage targets are visited, and always
    keep `d_safe` distance to all other agents (omitted for a single agent).
    """
    n, last = config.n_agents, (formula.horizon or config.episode_length) - 1

    def target(i: int, stage: int, k: int, eps: float) -> str:
        if config.task == "coordination":
            return f"d_a{i}_lm{stage}_{i} <= {eps!r}"
        closest = f"d_a1_lm{stage}_{k}"
        for j in range(2, n + 1):
            closest = f"min({closest}, d_a{j}_lm{stage}_{k})"
        return f"{closest} <= {eps!r}"

    def conjunction(atoms: List[str]) -> str:
        return " & ".join(f"({atom})" for atom in dict.fromkeys(atoms))

    formulas = list()
    for i in range(1, n + 1):
        first = conjunction([target(i, 1, k, formula.eps1) for k in range(1, n + 1)])
        second = conjunction([target(i, 2, k, formula.eps2) for k in range(1, n + 1)])
        agent = [f"F[0,{last}] ({first})", f"F[0,{last}] (G[0,{formula.hold}] ({second}))"]
        own = [i] if config.task == "coordination" else range(1, n + 1)
        early = " | ".join(f"(d_a{i}_lm2_{k} <= {formula.eps2!r})" for k in own)
        agent.append(f"(!({early})) U[0,{last}] ({first})")
        if n > 1:
            pairs = [f"d_a{min(i, j)}_a{max(i, j)} >= {formula.d_safe!r}" for j in range(1, n + 1) if j != i]
            agent.append(f"G[0,{last}] ({conjunction(pairs)})")
        formulas.append(agent)

    return formulas, list(distance_channels(_dummy_state(n)))

def _dummy_state(n_agents: int) -> ParticleState:
    return ParticleState(
        positions=np.zeros((n_agents, 2)),
        velocities=np.zeros((n_agents, 2)),
        landmarks=np.zeros((2, n_agents, 2)),
        visited=np.zeros(n_agents, dtype=bool),
    )

def baseline_reward(state: ParticleState, config: ParticleConfig, n_collisions: int = 0) -> float:
    """Shared reward: distance to the current goal stage, the other stage and collision penalties."""
    goal, others = state.landmarks[state.stage], state.landmarks[1 - state.stage]
    if config.task == "coordination":
        to_goal = np.linalg.norm(state.positions - goal, axis=-1)
        to_others = np.linalg.norm(state.positions - others, axis=-1)
    else:
        # distances of every landmark k to its closest agent
        to_goal = np.linalg.norm(state.positions[None] - goal[:, None], axis=-1).min(axis=1)
        to_others = np.linalg.norm(state.positions[None] - others[:, None], axis=-1).min(axis=1)
    reward = -config.c1 * to_goal.sum() + config.others_sign * config.c2 * to_others.sum()
    return float(reward + config.collision_penalty * n_collisions)

def observe(state: ParticleState, i: int) -> np.ndarray:
    """
    Local observation of agent i: own velocity (2), landmark positions of both
    stages relative to the agent in stage-major order (4N) and relative
    positions of all other agents in index order (2(N-1)).
    """
    position = state.positions[i]
    others = np.delete(state.positions, i, axis=0) - position
    return np.concatenate([state.velocities[i], (state.landmarks - position).reshape(-1), others.reshape(-1)])


class ParticleEnv(MultiAgentEnv):
    metadata = {"render_modes": []}

    def __init__(self, config: ParticleConfig = ParticleConfig(), formula: Optional[FormulaConfig] = None):
        super().__init__()
        self.config, self.formula_config = config, formula or FormulaConfig()
        self.n_agents, self.n_actions = config.n_agents, len(ACTIONS)
        self.obs_dim = 2 + 4 * config.n_agents + 2 * (config.n_agents - 1)
        self.episode_length, self.dt = config.episode_length, config.dt
        self.action_space = spaces.MultiDiscrete([self.n_actions] * self.n_agents)
        self.observation_space = spaces.Box(-np.inf, np.inf, (self.n_agents, self.obs_dim), np.float64)
        self.state: Optional[ParticleState] = None
        self.collisions = list()

    def _place(self, count: int) -> np.ndarray:
        points = list()
        for _ in range(count):
            for _ in range(self.config.placement_tries):
                point = self.np_random.uniform(-self.config.arena, self.config.arena, 2)
                if all(np.linalg.norm(point - other) > self.config.collision_radius for other in points):
                    points.append(point)
                    break
            else:
                raise PlacementError(f"Could not place {count} entities in the arena after {self.config.placement_tries} tries!")
        return np.array(points)

    def reset(self, *, seed=None, options=None):
        super().reset(seed=seed)
        n = self.n_agents
        points = self._place(3 * n)
        self.state = ParticleState(
            positions=points[:n],
            velocities=np.zeros((n, 2)),
            landmarks=points[n:].reshape(2, n, 2),
            visited=np.zeros(n, dtype=bool),
        )
        self.collisions = list()
        return self.observe(), dict()

    def observe(self) -> np.ndarray:
        return np.stack([observe(self.state, i) for i in range(self.n_agents)])

    def _update_stage(self):
        state, radius = self.state, self.formula_config.eps1
        distances = np.linalg.norm(state.positions[None] - state.landmarks[0][:, None], axis=-1)
        if self.config.task == "coordination":
            state.visited |= np.diagonal(distances) <= radius
        else:
            state.visited |= distances.min(axis=1) <= radius
        if state.stage == 0 and state.visited.all():
            state.stage = 1

    def step(self, actions, controls=None):
        if controls is not None:
            logger.warning("The particle world has no continuous controls, ignoring them.")
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.n_agents,) or not ((0 <= actions) & (actions < self.n_actions)).all():
            raise ValueError(f"Expected one action in [0, {self.n_actions}) per agent, got {actions}!")
        state, config = self.state, self.config

        acceleration = ACTIONS[actions] * config.force / config.mass
        state.velocities = (1 - config.damping) * state.velocities + acceleration * config.dt
        state.positions = np.clip(state.positions + state.velocities * config.dt, -config.arena, config.arena)
        state.step += 1

        self.collisions = [
            (i, j) for i, j in combinations(range(self.n_agents), 2)
            if np.linalg.norm(state.positions[i] - state.positions[j]) < 2 * config.collision_radius
        ]
        self._update_stage()
        reward = baseline_reward(state, config, len(self.collisions))
        truncated = state.step >= self.episode_length
        info = dict(collisions=list(self.collisions), stage=state.stage)
        return self.observe(), np.full(self.n_agents, reward), False, truncated, info

    def formula_texts(self):
        return stl_formulas(self.config, self.formula_config)[0]

    def channel_names(self):
        return list(distance_channels(_dummy_state(self.n_agents)))

    def channels(self):
        return distance_channels(self.state)

    def reached(self):
        """Whether the second-stage targets are covered at the current step."""
        state, radius = self.state, self.formula_config.eps2
        distances = np.linalg.norm(state.positions[None] - state.landmarks[1][:, None], axis=-1)
        if self.config.task == "coordination":
            return np.diagonal(distances) <= radius
        return np.full(self.n_agents, bool((distances.min(axis=1) <= radius).all()))

    def layout(self):
        state = self.state
        lines = [f"particle world ({self.config.task}), step {state.step}, stage {state.stage + 1}"]
        lines += [f"  agent {i+1}: p={np.round(p, 3).tolist()} v={np.round(v, 3).tolist()}"
                  for i, (p, v) in enumerate(zip(state.positions, state.velocities))]
        for stage in range(2):
            lines += [f"  landmark {stage+1}.{k+1}: {np.round(p, 3).tolist()}" for k, p in enumerate(state.landmarks[stage])]
        return "\n".join(lines)
