"""
Exact solver for the small quadratic programs of the safety shield:

    minimize 1/2 |u - u_q|^2   subject to   a_k . u + b_k >= 0,   lower <= u <= upper

With an identity Hessian every optimum is fixed by at most `dim(u)` linearly
independent active constraints, so all active sets up to that size are
solved in closed form and the best feasible candidate is kept.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Tuple

import numpy as np

# slack below which a candidate counts as infeasible
FEASIBILITY_TOLERANCE = 1e-9
# barrier constraints a single problem may carry
MAX_CONSTRAINTS = 8

@dataclass(frozen=True)
class CbfConstraint:
    """The halfspace `gradient . u + offset >= 0`, labelled with the barrier it comes from."""
    gradient: np.ndarray
    offset: float
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "gradient", np.asarray(self.gradient, dtype=np.float64))
        if not np.isfinite(self.gradient).all() or not np.isfinite(self.offset):
            raise ValueError(f"Constraint {self.source or ''} has non-finite coefficients!")

    def slack(self, control: np.ndarray) -> float:
        return float(self.gradient @ control + self.offset)

@dataclass
class QpProblem:
    nominal: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    constraints: List[CbfConstraint] = field(default_factory=list)
    max_constraints: int = MAX_CONSTRAINTS

    def __post_init__(self):
        self.nominal, self.lower, self.upper = (np.asarray(v, dtype=np.float64) for v in (self.nominal, self.lower, self.upper))
        if not self.nominal.shape == self.lower.shape == self.upper.shape:
            raise ValueError("Nominal control and bounds must have the same shape!")
        if (self.lower > self.upper).any():
            raise ValueError(f"Unordered bounds {self.lower} > {self.upper}!")
        if len(self.constraints) > self.max_constraints:
            raise ValueError(f"At most {self.max_constraints} constraints are supported, got {len(self.constraints)}!")

    def halfspaces(self) -> Tuple[np.ndarray, np.ndarray]:
        """All constraints as rows of `A u + b >= 0`: barriers first, then lower and upper bounds."""
        dim = len(self.nominal)
        rows = [c.gradient for c in self.constraints] + list(np.eye(dim)) + list(-np.eye(dim))
        offsets = [c.offset for c in self.constraints] + list(-self.lower) + list(self.upper)
        return np.array(rows).reshape(-1, dim), np.array(offsets)

    def objective(self, control: np.ndarray) -> float:
        return 0.5 * float(np.sum((control - self.nominal) ** 2))

@dataclass
class ShieldDecision:
    control: np.ndarray
    feasible: bool
    fallback: bool = False
    # slack of every barrier constraint at `control`
    slacks: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # indices into `QpProblem.halfspaces()` and their multipliers
    active_set: Tuple[int, ...] = ()
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def min_slack(self) -> float:
        return float(self.slacks.min()) if len(self.slacks) else np.inf


def solve_qp(problem: QpProblem) -> ShieldDecision:
    A, b = problem.halfspaces()
    nominal, dim = problem.nominal, len(problem.nominal)
    best, best_key = None, None

    for size in range(dim + 1):
        for subset in combinations(range(len(A)), size):
            A_S = A[list(subset)]
            if size:
                gram = A_S @ A_S.T
                if abs(np.linalg.det(gram)) < 1e-12:
                    continue
                multipliers = np.linalg.solve(gram, -(A_S @ nominal + b[list(subset)]))
                control = nominal + A_S.T @ multipliers
            else:
                multipliers, control = np.zeros(0), nominal.copy()
            if (A @ control + b).min() < -FEASIBILITY_TOLERANCE:
                continue
            # among optimal candidates prefer those satisfying the sign condition on the multipliers
            key = (problem.objective(control), bool((multipliers < -FEASIBILITY_TOLERANCE).any()))
            if best_key is None or key[0] < best_key[0] - 1e-12 or (key[0] <= best_key[0] + 1e-12 and key[1] < best_key[1]):
                best, best_key = (control, subset, multipliers), key

    if best is None:
        control = np.clip(nominal, problem.lower, problem.upper)
        slacks = np.array([c.slack(control) for c in problem.constraints])
        return ShieldDecision(control=control, feasible=False, slacks=slacks)
    control, subset, multipliers = best
    slacks = np.array([c.slack(control) for c in problem.constraints])
    return ShieldDecision(control=control, feasible=True, slacks=slacks, active_set=subset, multipliers=multipliers)
