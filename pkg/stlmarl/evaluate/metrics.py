from typing import Iterable, Sequence

import pandas as pd
import torch
from torchmetrics import Metric

class SafetyRate(Metric):
    """Fraction of episodes without any collision."""

    higher_is_better = True
    full_state_update = False

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.add_state("unsafe", torch.tensor(0, dtype=torch.long), dist_reduce_fx="sum")
        self.add_state("n_episodes", torch.tensor(0, dtype=torch.long), dist_reduce_fx="sum")

    def update(self, collisions: int | Sequence[int]):
        """Add episodes given by their collision counts."""
        counts = torch.atleast_1d(torch.as_tensor(collisions))
        self.unsafe += int((counts > 0).sum())
        self.n_episodes += counts.numel()

    def compute(self):
        if self.n_episodes == 0:
            raise ValueError("The safety rate of zero episodes is undefined!")
        return 1 - self.unsafe.item() / self.n_episodes.item()


class ReturnStatistics(Metric):
    """Mean and population standard deviation of episode returns."""

    full_state_update = False

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.add_state("total", torch.tensor(0.0, dtype=torch.float64), dist_reduce_fx="sum")
        self.add_state("squares", torch.tensor(0.0, dtype=torch.float64), dist_reduce_fx="sum")
        self.add_state("n_episodes", torch.tensor(0, dtype=torch.long), dist_reduce_fx="sum")

    def update(self, returns: float | Sequence[float]):
        returns = torch.atleast_1d(torch.as_tensor(returns, dtype=torch.float64))
        self.total += returns.sum()
        self.squares += (returns ** 2).sum()
        self.n_episodes += returns.numel()

    def compute(self):
        if self.n_episodes == 0:
            raise ValueError("Statistics of zero episodes are undefined!")
        mean = self.total / self.n_episodes
        variance = (self.squares / self.n_episodes - mean ** 2).clamp(min=0)
        return mean.item(), variance.sqrt().item()


def safety_rate(collisions: Iterable[int]) -> float:
    """`1 - unsafe / total` over per-episode collision counts."""
    metric = SafetyRate()
    metric.update(list(collisions))
    return metric.compute()

def episode_collisions(metrics: pd.DataFrame) -> pd.Series:
    """Collision events per episode summed over agents, from a metrics table."""
    return metrics.groupby("episode")["collisions"].sum()
