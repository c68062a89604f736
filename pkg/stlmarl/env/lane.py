"""
Multi-lane traffic jam: broken-down vehicles block all but the open lanes at
`block_x`, agents start upstream in distinct lanes and have to pass the
narrow road to reach destinations downstream in their own lanes. Vehicles
follow the kinematic bicycle model; x is the longitudinal coordinate and
lane k covers the lateral band [k * lane_width, (k + 1) * lane_width], so
"left" means increasing y.
"""

from dataclasses import dataclass, field
from itertools import combinations
from math import atan, ceil, cos, floor, hypot, sin, tan
from typing import Dict, List, Literal, Optional, Tuple

from gymnasium import spaces
import numpy as np
from transformers.utils import logging

from ..stl import FormulaConfig
from .base import EnvironmentConfigError, MultiAgentEnv

logger = logging.get_logger("transformers")

KEEP, LEFT, RIGHT, BRAKE = range(4)

@dataclass
class LaneConfig:
    n_lanes: int = 4
    lane_width: float = 3.5
    n_agents: int = 3
    blocked_lanes: int = 3
    # accelerations of the throttle actions (m/s^2)
    throttle: List[float] = field(default_factory=lambda: [1.0, 2.0, -1.0])
    a_limit: float = 4.0
    dt: float = 0.1
    l_f: float = 1.5
    l_r: float = 1.5
    # time-headway factor of the safe distances
    headway: float = 0.1
    # proximity radius L around the narrow road (m)
    road_radius: float = 15.0
    v_stop: float = 0.1
    v_max: float = 15.0
    episode_length: int = 150
    w1: float = 1.0
    w2: float = 10.0
    w3: float = 0.05
    # defaults to the initial distance to the destination
    c: Optional[float] = None
    # bounding circle of every vehicle, below half the lane width
    radius: float = 1.7
    steer_max: float = 0.5
    steer_gain: float = 0.1
    heading_gain: float = 1.0
    # keep, brake and throttle also steer back to the lane centerline
    lane_keeping: bool = True
    block_x: float = 60.0
    start_gap: float = 5.0
    start_span: float = 30.0
    dest_distance: float = 40.0
    margin_cap: float = 50.0
    # which agent pairs enter the braking-distance margins
    margin_scope: Literal["adjacent", "all"] = "adjacent"

    def __post_init__(self):
        if self.n_lanes < 1 or self.lane_width <= 0:
            raise EnvironmentConfigError("Roads need at least one lane of positive width!")
        if not 0 <= self.blocked_lanes < self.n_lanes:
            raise EnvironmentConfigError(f"At least one of {self.n_lanes} lanes must stay open, {self.blocked_lanes} are blocked!")
        if not 1 <= self.n_agents <= self.n_lanes:
            raise EnvironmentConfigError(f"Agents start in distinct lanes, so 1 <= n_agents <= {self.n_lanes}!")
        if not self.throttle or self.a_limit <= 0:
            raise EnvironmentConfigError("At least one throttle level and a positive acceleration limit are required!")
        if min(self.dt, self.l_f, self.l_r, self.v_max, self.radius, self.steer_max) <= 0 or self.episode_length < 1:
            raise EnvironmentConfigError("Time step, geometry, speed and steering limits must be positive!")
        if not all(np.isfinite([self.w1, self.w2, self.w3, self.c or 0.0])):
            raise EnvironmentConfigError("Reward weights must be finite!")
        if self.margin_scope not in ("adjacent", "all"):
            raise EnvironmentConfigError(f"Unknown margin scope '{self.margin_scope}'!")

    @property
    def n_actions(self) -> int:
        return 4 + len(self.throttle)

    @property
    def a_max(self) -> float:
        return max(max(self.throttle), 0.0)

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        return min(max(floor(y / self.lane_width), 0), self.n_lanes - 1)

    def occupied_lanes(self, y: float) -> range:
        """Lanes whose band the bounding circle of a vehicle at lateral position `y` overlaps."""
        lower = max(floor((y - self.radius) / self.lane_width), 0)
        upper = min(ceil((y + self.radius) / self.lane_width) - 1, self.n_lanes - 1)
        return range(lower, upper + 1)

@dataclass
class VehicleState:
    position: np.ndarray
    speed: float = 0.0
    acceleration: float = 0.0
    heading: float = 0.0
    lane: int = 0
    slip: float = 0.0

@dataclass
class LaneWorldState:
    vehicles: List[VehicleState]
    obstacles: np.ndarray
    obstacle_lanes: List[int]
    road: np.ndarray
    destinations: np.ndarray
    initial_distance: np.ndarray
    wait: np.ndarray
    reached: np.ndarray
    step: int = 0


def action_to_control(state: LaneWorldState, config: LaneConfig, i: int, action: int) -> Tuple[np.ndarray, bool]:
    """
    Nominal control (acceleration, steering angle) of a discrete action and
    whether a lane change was refused because there is no adjacent lane.
    Lane changes steer toward the centerline of the target lane. With
    `lane_keeping` the other actions steer back to the current lane
    centerline, otherwise their steering angle is zero.
    """
    vehicle = state.vehicles[i]
    target, refused = vehicle.lane, False
    match action:
        case 0: # keep
            acceleration = 0.0
        case 1 | 2: # left, right
            acceleration, target = 0.0, vehicle.lane + (1 if action == LEFT else -1)
            if not 0 <= target < config.n_lanes:
                target, refused = vehicle.lane, True
        case 3: # brake
            acceleration = -config.a_limit
        case _ if 4 <= action < config.n_actions:
            acceleration = config.throttle[action - 4]
        case _:
            raise ValueError(f"Invalid action {action}, expected a value in [0, {config.n_actions})!")
    if target == vehicle.lane and not config.lane_keeping:
        return np.array([acceleration, 0.0]), refused
    lateral_error = vehicle.position[1] - config.lane_center(target)
    steering = -config.steer_gain * lateral_error - config.heading_gain * vehicle.heading
    return np.array([acceleration, np.clip(steering, -config.steer_max, config.steer_max)]), refused

def bicycle_step(vehicle: VehicleState, control: np.ndarray, config: LaneConfig):
    """One explicit Euler step of the kinematic bicycle model, in place."""
    acceleration, steering = float(control[0]), float(control[1])
    slip = atan(config.l_r / (config.l_f + config.l_r) * tan(steering))
    x, y = vehicle.position
    x += vehicle.speed * cos(vehicle.heading + slip) * config.dt
    y += vehicle.speed * sin(vehicle.heading + slip) * config.dt
    vehicle.heading += vehicle.speed / config.l_r * sin(slip) * config.dt
    vehicle.speed = min(max(vehicle.speed + acceleration * config.dt, 0.0), config.v_max)
    vehicle.position = np.array([x, min(max(y, 0.0), np.nextafter(config.n_lanes * config.lane_width, 0))])
    vehicle.acceleration, vehicle.slip = acceleration, slip
    vehicle.lane = config.lane_of(vehicle.position[1])

def lane_channels(state: LaneWorldState, config: LaneConfig) -> Dict[str, float]:
    """
    One trace row: capped braking-distance margins `margin_a<i>_a<j>` (i < j),
    destination distances `dest_a<i>`, narrow-road distances `road_a<i>`, wait
    timers `wait_a<i>` and speeds relative to the stopping threshold `speed_a<i>`.
    """
    channels, vehicles = dict(), state.vehicles
    for i, j in combinations(range(len(vehicles)), 2):
        first, second = vehicles[i], vehicles[j]
        margin = config.margin_cap
        if config.margin_scope == "all" or abs(first.lane - second.lane) <= 1:
            gap = float(np.linalg.norm(first.position - second.position)) - 2 * config.radius
            margin = min(margin, gap - (second.speed - first.speed) ** 2 / (2 * config.a_limit))
        channels[f"margin_a{i+1}_a{j+1}"] = margin
    for i, vehicle in enumerate(vehicles, 1):
        channels[f"dest_a{i}"] = float(np.linalg.norm(vehicle.position - state.destinations[i - 1]))
        channels[f"road_a{i}"] = float(np.linalg.norm(vehicle.position - state.road))
        channels[f"wait_a{i}"] = float(state.wait[i - 1])
        channels[f"speed_a{i}"] = vehicle.speed - config.v_stop
    return channels

def stl_formulas(config: LaneConfig, formula: FormulaConfig) -> Tuple[List[List[str]], List[str]]:
    """
    Per-agent specifications: always keep the braking-distance margin to the
    other agents, eventually reach the destination, stop within `tau` steps
    when close to the narrow road, and never wait there for `t_max` steps.
    """
    n, last = config.n_agents, (formula.horizon or config.episode_length) - 1
    radius = float(config.road_radius)
    formulas = list()
    for i in range(1, n + 1):
        agent = list()
        if n > 1:
            margins = " & ".join(
                f"(margin_a{min(i, j)}_a{max(i, j)} >= {formula.eps1!r})" for j in range(1, n + 1) if j != i
            )
            agent.append(f"G[0,{last}] ({margins})")
        agent.append(f"F[0,{last}] (dest_a{i} <= {formula.eps2!r})")
        agent.append(f"G[0,{last}] (!(road_a{i} <= {radius!r}) | F[0,{formula.tau}] (speed_a{i} <= 0.0))")
        agent.append(f"G[0,{last}] (!(road_a{i} <= {radius!r}) | (wait_a{i} <= {float(formula.t_max - 1)!r}))")
        formulas.append(agent)
    names = [f"margin_a{i}_a{j}" for i, j in combinations(range(1, n + 1), 2)]
    names += [f"{kind}_a{i}" for i in range(1, n + 1) for kind in ("dest", "road", "wait", "speed")]
    return formulas, names

def baseline_reward(state: LaneWorldState, config: LaneConfig, i: int, collisions: List[tuple]) -> float:
    vehicle = state.vehicles[i]
    hits = sum(i in event for event in collisions)
    c = state.initial_distance[i] if config.c is None else config.c
    distance = float(np.linalg.norm(vehicle.position - state.destinations[i]))
    return config.w1 * abs(vehicle.speed) / config.v_max - config.w2 * hits + config.w3 * (c - distance)


class LaneEnv(MultiAgentEnv):
    metadata = {"render_modes": []}
    # observations scale positions by this length (m)
    scale = 50.0

    def __init__(self, config: LaneConfig = LaneConfig(), formula: Optional[FormulaConfig] = None):
        super().__init__()
        self.config = config
        self.formula_config = formula or FormulaConfig(eps1=1.0, eps2=2.0)
        self.n_agents, self.n_actions = config.n_agents, config.n_actions
        self.obs_dim = 10 + 3 * (config.n_agents - 1)
        self.episode_length, self.dt = config.episode_length, config.dt
        self.action_space = spaces.MultiDiscrete([self.n_actions] * self.n_agents)
        self.observation_space = spaces.Box(-np.inf, np.inf, (self.n_agents, self.obs_dim), np.float64)
        self.state: Optional[LaneWorldState] = None
        self.collisions, self.refused = list(), np.zeros(self.n_agents, dtype=bool)

    def reset(self, *, seed=None, options=None):
        super().reset(seed=seed)
        config, rng = self.config, self.np_random
        blocked = sorted(rng.choice(config.n_lanes, config.blocked_lanes, replace=False).tolist())
        open_lanes = [lane for lane in range(config.n_lanes) if lane not in blocked]
        road = np.array([config.block_x, np.mean([config.lane_center(lane) for lane in open_lanes])])
        obstacles = np.array([[config.block_x, config.lane_center(lane)] for lane in blocked]).reshape(-1, 2)

        lanes = rng.permutation(config.n_lanes)[:config.n_agents].tolist()
        front = config.block_x - config.road_radius - config.start_gap
        starts = rng.uniform(front - config.start_span, front, config.n_agents)
        vehicles = [
            VehicleState(position=np.array([x, config.lane_center(lane)]), lane=lane)
            for x, lane in zip(starts, lanes)
        ]
        destinations = np.array([[config.block_x + config.dest_distance, config.lane_center(lane)] for lane in lanes])
        self.state = LaneWorldState(
            vehicles=vehicles,
            obstacles=obstacles,
            obstacle_lanes=blocked,
            road=road,
            destinations=destinations,
            initial_distance=np.linalg.norm(destinations - np.array([v.position for v in vehicles]), axis=-1),
            wait=np.zeros(config.n_agents, dtype=np.int64),
            reached=np.zeros(config.n_agents, dtype=bool),
        )
        self.collisions, self.refused = list(), np.zeros(self.n_agents, dtype=bool)
        return self.observe(), dict()

    def front_gap(self, i: int) -> float:
        """Bumper gap to the closest vehicle or obstacle ahead in the lanes agent i occupies."""
        vehicle, config = self.state.vehicles[i], self.config
        lanes = set(config.occupied_lanes(vehicle.position[1]))
        others = [v.position for j, v in enumerate(self.state.vehicles) if j != i and lanes & set(config.occupied_lanes(v.position[1]))]
        others += [p for p, lane in zip(self.state.obstacles, self.state.obstacle_lanes) if lane in lanes]
        gaps = [p[0] - vehicle.position[0] - 2 * config.radius for p in others if p[0] > vehicle.position[0]]
        return min(gaps, default=np.inf)

    def observe(self) -> np.ndarray:
        """
        Per agent: speed / v_max, acceleration / a_limit, heading, lateral
        offset from the lane center / lane width, destination and narrow road
        relative to the agent, wait time in seconds, front gap (capped at the
        observation scale), then per other agent its relative position and
        relative speed / v_max. Positions are divided by `scale`.
        """
        state, config, scale = self.state, self.config, self.scale
        observations = list()
        for i, vehicle in enumerate(state.vehicles):
            own = [
                vehicle.speed / config.v_max,
                vehicle.acceleration / config.a_limit,
                vehicle.heading,
                (vehicle.position[1] - config.lane_center(vehicle.lane)) / config.lane_width,
                *((state.destinations[i] - vehicle.position) / scale),
                *((state.road - vehicle.position) / scale),
                state.wait[i] * config.dt,
                min(self.front_gap(i), scale) / scale,
            ]
            for j, other in enumerate(state.vehicles):
                if j != i:
                    own += [*((other.position - vehicle.position) / scale), (other.speed - vehicle.speed) / config.v_max]
            observations.append(own)
        return np.array(observations, dtype=np.float64)

    def action_to_control(self, i: int, action: int):
        return action_to_control(self.state, self.config, i, int(action))

    def step(self, actions, controls: Optional[np.ndarray] = None):
        """
        Advance all vehicles by one step. `controls` (one (acceleration,
        steering) row per agent, e.g. from the safety shield) replace the
        nominal controls of `actions`.
        """
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.n_agents,):
            raise ValueError(f"Expected one action per agent, got {actions}!")
        state, config = self.state, self.config
        nominal = [self.action_to_control(i, action) for i, action in enumerate(actions)]
        self.refused = np.array([refused for _, refused in nominal])
        if controls is None:
            controls = np.stack([control for control, _ in nominal])
        for i in np.flatnonzero(self.refused):
            logger.warning(f"Agent {i + 1} requested a lane change without an adjacent lane, keeping its lane.")

        for vehicle, control in zip(state.vehicles, np.asarray(controls, dtype=np.float64)):
            bicycle_step(vehicle, control, config)
        state.step += 1

        collisions = [
            (i, j) for i, j in combinations(range(self.n_agents), 2)
            if np.linalg.norm(state.vehicles[i].position - state.vehicles[j].position) < 2 * config.radius
        ]
        collisions += [
            (i, None) for i, vehicle in enumerate(state.vehicles) for obstacle in state.obstacles
            if np.linalg.norm(vehicle.position - obstacle) < 2 * config.radius
        ]
        self.collisions = collisions

        for i, vehicle in enumerate(state.vehicles):
            if np.linalg.norm(vehicle.position - state.road) <= config.road_radius and vehicle.speed <= config.v_stop:
                state.wait[i] += 1
            if np.linalg.norm(vehicle.position - state.destinations[i]) <= self.formula_config.eps2:
                state.reached[i] = True

        rewards = np.array([baseline_reward(state, config, i, collisions) for i in range(self.n_agents)])
        truncated = state.step >= self.episode_length
        info = dict(collisions=list(collisions), refused=self.refused.copy(), controls=np.asarray(controls))
        return self.observe(), rewards, False, truncated, info

    def formula_texts(self):
        return stl_formulas(self.config, self.formula_config)[0]

    def channel_names(self):
        return stl_formulas(self.config, self.formula_config)[1]

    def channels(self):
        return lane_channels(self.state, self.config)

    def reached(self):
        return self.state.reached.copy()

    def layout(self):
        state, config = self.state, self.config
        lines = [
            f"traffic jam: {config.n_lanes} lanes of {config.lane_width} m, step {state.step}",
            f"  narrow road at {np.round(state.road, 2).tolist()}, blocked lanes {state.obstacle_lanes}",
        ]
        for i, vehicle in enumerate(state.vehicles):
            lines.append(
                f"  agent {i+1}: p={np.round(vehicle.position, 2).tolist()} v={vehicle.speed:.2f} "
                f"psi={vehicle.heading:.3f} lane={vehicle.lane} dest={np.round(state.destinations[i], 2).tolist()} "
                f"wait={state.wait[i]}"
            )
        return "\n".join(lines)
