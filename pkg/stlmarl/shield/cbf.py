"""
Time-varying control barrier functions of the traffic-jam scenario and the
safety shield built on them. A front barrier keeps the bumper gap to the
closest vehicle ahead above the safe following distance, a back barrier does
the same for the closest vehicle behind in a lane the ego vehicle moves into.
Barriers are propagated with a longitudinal point-mass model over one step,

    x' = x + v dt + a dt^2 / 2,    v' = v + a dt,

with other vehicles keeping their speed, which makes the discrete-time
condition h' >= (1 - gamma) h affine in the control (acceleration, steering).
"""

from dataclasses import dataclass
from math import inf
from typing import List, Literal, Sequence, Tuple

import numpy as np
from transformers.utils import logging

from ..env.lane import BRAKE, LEFT, RIGHT, LaneConfig, LaneWorldState, action_to_control
from .qp import MAX_CONSTRAINTS, CbfConstraint, QpProblem, ShieldDecision, solve_qp

logger = logging.get_logger("transformers")

def safe_distance_front(v: float, v_front: float, a_limit: float, headway: float) -> float:
    """Distance to keep to the vehicle ahead: headway plus braking distance at the speed difference."""
    if a_limit <= 0:
        raise ValueError("The acceleration limit must be positive!")
    return (1 + headway) * v + (v - v_front) ** 2 / (2 * a_limit)

def safe_distance_back(v: float, v_back: float, a_limit: float, headway: float) -> float:
    if a_limit <= 0:
        raise ValueError("The acceleration limit must be positive!")
    return (1 + headway) * v + (v_back - v) ** 2 / (2 * a_limit)


@dataclass(frozen=True)
class Barrier:
    kind: Literal["front", "back"]
    # "a<j>" for agents, "o<k>" for broken-down vehicles
    other: str
    gap: float
    speed: float
    other_speed: float
    value: float

    def predict(self, acceleration: float, config: LaneConfig) -> float:
        """Barrier value after one step of the point-mass model under `acceleration`."""
        dt, v = config.dt, self.speed
        v_next = v + acceleration * dt
        if self.kind == "front":
            gap = self.gap + (self.other_speed - v) * dt - 0.5 * acceleration * dt ** 2
            return gap - safe_distance_front(v_next, self.other_speed, config.a_limit, config.headway)
        gap = self.gap + (v - self.other_speed) * dt + 0.5 * acceleration * dt ** 2
        return gap - safe_distance_back(v_next, self.other_speed, config.a_limit, config.headway)

def _neighbours(state: LaneWorldState, config: LaneConfig, i: int, lane: int):
    """Closest vehicles ahead and behind agent i in `lane` as (label, x, speed) or None."""
    ego = state.vehicles[i].position[0]
    others = [
        (f"a{j + 1}", v.position[0], v.speed) for j, v in enumerate(state.vehicles)
        if j != i and lane in config.occupied_lanes(v.position[1])
    ]
    others += [(f"o{k + 1}", p[0], 0.0) for k, (p, l) in enumerate(zip(state.obstacles, state.obstacle_lanes)) if l == lane]
    front = min((o for o in others if o[1] > ego), key=lambda o: o[1], default=None)
    back = max((o for o in others if o[1] <= ego), key=lambda o: o[1], default=None)
    return front, back

def _barrier(state: LaneWorldState, config: LaneConfig, i: int, kind: str, neighbour) -> Barrier:
    label, x, other_speed = neighbour
    vehicle = state.vehicles[i]
    if kind == "front":
        gap = x - vehicle.position[0] - 2 * config.radius
        value = gap - safe_distance_front(vehicle.speed, other_speed, config.a_limit, config.headway)
    else:
        gap = vehicle.position[0] - x - 2 * config.radius
        value = gap - safe_distance_back(vehicle.speed, other_speed, config.a_limit, config.headway)
    return Barrier(kind, label, gap, vehicle.speed, other_speed, value)

def cbf_values(state: LaneWorldState, config: LaneConfig, i: int, target_lane: int) -> Tuple[float, float]:
    """
    Front barrier `h_fv` w.r.t. the closest vehicle ahead in the target lane and,
    for lane changes, back barrier `h_bv` w.r.t. the closest vehicle behind it.
    Absent vehicles give `inf`.
    """
    if not 0 <= target_lane < config.n_lanes:
        raise ValueError(f"Invalid lane {target_lane}!")
    front, back = _neighbours(state, config, i, target_lane)
    h_front = _barrier(state, config, i, "front", front).value if front else inf
    h_back = inf
    if back and target_lane != state.vehicles[i].lane:
        h_back = _barrier(state, config, i, "back", back).value
    return h_front, h_back

def barriers(state: LaneWorldState, config: LaneConfig, i: int, target_lane: int) -> List[Barrier]:
    """
    Barriers guarding agent i: front barriers in every lane its body occupies
    and in the target lane, back barriers in all of these lanes except the
    current one.
    """
    vehicle = state.vehicles[i]
    lanes = sorted({*config.occupied_lanes(vehicle.position[1]), target_lane})
    found = dict()
    for lane in lanes:
        front, back = _neighbours(state, config, i, lane)
        if front:
            found.setdefault(("front", front[0]), _barrier(state, config, i, "front", front))
        if back and lane != vehicle.lane:
            found.setdefault(("back", back[0]), _barrier(state, config, i, "back", back))
    return list(found.values())

def control_bounds(state: LaneWorldState, config: LaneConfig, i: int) -> Tuple[np.ndarray, np.ndarray]:
    """Box on (acceleration, steering); acceleration bounds never drive the speed out of [0, v_max]."""
    v, dt = state.vehicles[i].speed, config.dt
    lower = np.array([-min(config.a_limit, v / dt), -config.steer_max])
    upper = np.array([max(min(config.a_max, (config.v_max - v) / dt), lower[0]), config.steer_max])
    return lower, upper

def barrier_constraint(barrier: Barrier, config: LaneConfig, gamma: float, a_bound: float) -> CbfConstraint:
    """
    Affine form of `h' - h >= -gamma h`. The quadratic acceleration term of
    the braking distance at the next step is bounded by `(a_bound dt)^2 / (2 a_l)`.
    """
    dt, a_limit, headway = config.dt, config.a_limit, config.headway
    v, w = barrier.speed, barrier.other_speed
    margin = (a_bound * dt) ** 2 / (2 * a_limit)
    if barrier.kind == "front":
        coefficient = -(0.5 * dt ** 2 + dt * ((1 + headway) + (v - w) / a_limit))
        offset = gamma * barrier.value + (w - v) * dt - margin
    else:
        coefficient = 0.5 * dt ** 2 - dt * ((1 + headway) - (w - v) / a_limit)
        offset = gamma * barrier.value + (v - w) * dt - margin
    return CbfConstraint(np.array([coefficient, 0.0]), offset, f"{barrier.kind}:{barrier.other}")

def target_lane(state: LaneWorldState, config: LaneConfig, i: int, action: int) -> int:
    lane = state.vehicles[i].lane
    if action in (LEFT, RIGHT):
        target = lane + (1 if action == LEFT else -1)
        return target if 0 <= target < config.n_lanes else lane
    return lane

def build_cbf_qp(
    state: LaneWorldState,
    config: LaneConfig,
    i: int,
    action: int,
    gamma: float = 0.5,
    max_constraints: int = MAX_CONSTRAINTS,
) -> QpProblem:
    if not 0 <= gamma <= 1:
        raise ValueError(f"The barrier rate must lie in [0, 1], got {gamma}!")
    nominal, _ = action_to_control(state, config, i, action)
    lower, upper = control_bounds(state, config, i)
    a_bound = max(abs(lower[0]), abs(upper[0]))
    constraints = [
        barrier_constraint(barrier, config, gamma, a_bound)
        for barrier in barriers(state, config, i, target_lane(state, config, i, action))
    ]
    return QpProblem(nominal, lower, upper, constraints, max_constraints=max_constraints)

def shield_action(
    state: LaneWorldState,
    config: LaneConfig,
    i: int,
    action: int,
    gamma: float = 0.5
) -> Tuple[int, np.ndarray, ShieldDecision]:
    """
    Correct the control of the requested action minimally so that all
    barriers stay valid. Infeasible requests fall back to the brake action,
    and to open-loop maximal braking when that is infeasible too.
    """
    decision = solve_qp(build_cbf_qp(state, config, i, action, gamma))
    if decision.feasible:
        return action, decision.control, decision

    brake = build_cbf_qp(state, config, i, BRAKE, gamma)
    decision = solve_qp(brake)
    decision.fallback = True
    if decision.feasible:
        logger.warning(f"Agent {i + 1}: action {action} has no safe control, braking instead.")
        return BRAKE, decision.control, decision

    logger.warning(f"Agent {i + 1}: no safe control exists, applying maximal braking.")
    decision.control = np.array([brake.lower[0], brake.nominal[1]])
    decision.slacks = np.array([c.slack(decision.control) for c in brake.constraints])
    return BRAKE, decision.control, decision


@dataclass
class ShieldRecord:
    agent: int
    requested: int
    applied: int
    h_fv: float
    h_bv: float
    min_slack: float
    feasible: bool
    fallback: bool

def shield_joint_action(
    state: LaneWorldState,
    config: LaneConfig,
    actions: Sequence[int],
    gamma: float = 0.5
) -> Tuple[np.ndarray, np.ndarray, List[ShieldRecord]]:
    """Shield every agent against the same snapshot of the world; returns applied actions, controls and audit records."""
    applied, controls, records = list(), list(), list()
    for i, action in enumerate(actions):
        h_fv, h_bv = cbf_values(state, config, i, target_lane(state, config, i, int(action)))
        chosen, control, decision = shield_action(state, config, i, int(action), gamma)
        applied.append(chosen)
        controls.append(control)
        records.append(ShieldRecord(i, int(action), chosen, h_fv, h_bv, decision.min_slack, decision.feasible, decision.fallback))
    return np.array(applied, dtype=np.int64), np.array(controls), records
