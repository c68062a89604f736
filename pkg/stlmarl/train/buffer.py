from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap: float,
    gamma: float,
    lam: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimates of one window of rewards and value
    estimates; `bootstrap` is the value of the state following the window
    (zero when the episode ended). Returns advantages and value targets.
    """
    rewards, values = np.asarray(rewards, dtype=np.float64), np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape or rewards.ndim != 1:
        raise ValueError(f"Rewards {rewards.shape} and values {values.shape} must be aligned sequences!")
    if not (0 <= gamma <= 1 and 0 <= lam <= 1):
        raise ValueError("Discount and GAE lambda must lie in [0, 1]!")
    advantages = np.zeros_like(rewards)
    next_value, running = bootstrap, 0.0
    for t in reversed(range(len(rewards))):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


@dataclass
class Window:
    """
    Up to `rollout_length` consecutive steps of one episode. Per-agent arrays
    have a leading agent dimension; hidden states are those entering the
    window and `bootstrap` is each critic's value after it.
    """
    states: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    actor_hidden: np.ndarray
    critic_hidden: np.ndarray
    bootstrap: np.ndarray
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __post_init__(self):
        n_agents, steps = self.actions.shape
        if len(self.states) != steps or any(a.shape[:2] != (n_agents, steps) for a in (
            self.observations, self.log_probs, self.values, self.rewards
        )):
            raise ValueError("All sequences of a window must share agent count and length!")
        if not np.isfinite(self.rewards).all():
            raise ValueError("Encountered non-finite rewards!")

    def __len__(self):
        return len(self.states)


@dataclass
class RolloutBuffer:
    """The windows of one episode together with its per-agent episode statistics."""
    n_agents: int
    windows: List[Window] = field(default_factory=list)
    # per step and agent
    stl_rewards: List[np.ndarray] = field(default_factory=list)
    baseline_rewards: List[np.ndarray] = field(default_factory=list)
    requested: List[np.ndarray] = field(default_factory=list)
    applied: List[np.ndarray] = field(default_factory=list)
    # per agent
    collisions: Optional[np.ndarray] = None
    reached: Optional[np.ndarray] = None
    fallbacks: Optional[np.ndarray] = None
    trace_rows: List[dict] = field(default_factory=list)
    shield_rows: List[dict] = field(default_factory=list)

    def __post_init__(self):
        self.collisions = np.zeros(self.n_agents, dtype=np.int64)
        self.fallbacks = np.zeros(self.n_agents, dtype=np.int64)
        self.reached = np.zeros(self.n_agents, dtype=bool)

    def __len__(self):
        return sum(map(len, self.windows))

    @property
    def window_starts(self) -> List[int]:
        return np.cumsum([0] + [len(w) for w in self.windows[:-1]]).tolist()

    def add_window(self, window: Window):
        self.windows.append(window)

    def compute_advantages(self, gamma: float, lam: float):
        for window in self.windows:
            pairs = [
                compute_gae(window.rewards[i], window.values[i], window.bootstrap[i], gamma, lam)
                for i in range(self.n_agents)
            ]
            window.advantages = np.stack([advantages for advantages, _ in pairs])
            window.returns = np.stack([returns for _, returns in pairs])

    def returns(self, kind: str = "stl") -> np.ndarray:
        """Undiscounted per-agent episode return under the STL or the baseline reward."""
        rewards = self.stl_rewards if kind == "stl" else self.baseline_rewards
        return np.sum(rewards, axis=0) if rewards else np.zeros(self.n_agents)

def minibatches(lengths: Sequence[int], batch_size: int, order: Sequence[int]) -> List[List[int]]:
    """Split windows (visited in `order`) into groups of roughly `batch_size` steps."""
    batches, current, steps = list(), list(), 0
    for index in order:
        current.append(index)
        steps += lengths[index]
        if steps >= batch_size:
            batches.append(current)
            current, steps = list(), 0
    if current:
        batches.append(current)
    return batches
