"""
Clipped policy-gradient objectives and the per-agent learner holding one
recurrent actor (local observations) and one recurrent critic (global state).
"""

from copy import deepcopy
from typing import List, Optional, Sequence

import numpy as np
import torch
from transformers.utils import logging

from ..model import Actor, Critic, NonFiniteError, adam_step, backward, entropy, log_prob, make_optimizer
from ..util import DTYPE, as_tensor
from .buffer import Window, minibatches

logger = logging.get_logger("transformers")

def actor_loss(
    logits: torch.Tensor,
    actions: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    clip: float = 0.2,
    entropy_coef: float = 0.01
) -> torch.Tensor:
    """
    The clipped surrogate objective plus the entropy bonus, to be maximized:
    `mean(min(r A, clip(r, 1 - clip, 1 + clip) A)) + entropy_coef * mean(H)`.
    """
    ratio = torch.exp(log_prob(logits, actions) - old_log_probs)
    if not torch.isfinite(ratio).all():
        raise NonFiniteError("Non-finite importance ratio, the policy snapshot is stale!")
    surrogate = torch.minimum(ratio * advantages, ratio.clamp(1 - clip, 1 + clip) * advantages)
    return surrogate.mean() + entropy_coef * entropy(logits).mean()

def critic_loss(values: torch.Tensor, old_values: torch.Tensor, returns: torch.Tensor, clip: float = 0.2) -> torch.Tensor:
    """Clipped value loss `mean(max((V - R)^2, (V_old + clip(V - V_old, -clip, clip) - R)^2))`."""
    clipped = old_values + (values - old_values).clamp(-clip, clip)
    return torch.maximum((values - returns) ** 2, (clipped - returns) ** 2).mean()


class AgentLearner:
    def __init__(
        self,
        obs_dim: int,
        state_dim: int,
        n_actions: int,
        hidden_size: int = 64,
        actor_lr: float = 1e-3,
        critic_lr: float = 1e-3,
        generator: Optional[torch.Generator] = None,
    ):
        self.actor = Actor(obs_dim, n_actions, hidden_size, generator=generator)
        self.critic = Critic(state_dim, hidden_size, generator=generator)
        self.actor_optimizer = make_optimizer(self.actor.parameters(), actor_lr)
        self.critic_optimizer = make_optimizer(self.critic.parameters(), critic_lr)
        self.actor_old, self.critic_old = self.snapshot()

    def snapshot(self):
        """Freeze copies of the current networks, the behaviour policy of the next rollout."""
        self.actor_old, self.critic_old = deepcopy(self.actor), deepcopy(self.critic)
        return self.actor_old, self.critic_old

    def state_dict(self):
        return dict(actor=self.actor_optimizer.state_dict(), critic=self.critic_optimizer.state_dict())

    def load_state_dict(self, state):
        self.actor_optimizer.load_state_dict(state["actor"])
        self.critic_optimizer.load_state_dict(state["critic"])

    def _evaluate(self, windows: Sequence[Window], agents: Sequence[int]):
        """Re-run actor and critic over whole windows, starting from their stored hidden states."""
        logits, values = list(), list()
        for window in windows:
            for agent in agents:
                out, _ = self.actor(as_tensor(window.observations[agent]), as_tensor(window.actor_hidden[agent]))
                value, _ = self.critic(as_tensor(window.states), as_tensor(window.critic_hidden[agent]))
                logits.append(out)
                values.append(value)
        return torch.cat(logits), torch.cat(values)

    @staticmethod
    def _gather(windows: Sequence[Window], agents: Sequence[int], key: str, dtype=DTYPE) -> torch.Tensor:
        return torch.cat([as_tensor(getattr(w, key)[a], dtype) for w in windows for a in agents])

    def update(
        self,
        windows: List[Window],
        agents: Sequence[int],
        epochs: int = 4,
        batch_size: int = 512,
        clip: float = 0.2,
        entropy_coef: float = 0.01,
        normalize_advantages: bool = True,
        generator: Optional[torch.Generator] = None,
    ) -> dict:
        """
        Several epochs of minibatch updates on the windows of `agents` (more
        than one when parameters are shared). Updates with non-finite ratios
        or gradients are skipped.
        """
        if normalize_advantages:
            flat = self._gather(windows, agents, "advantages")
            mean, std = flat.mean(), flat.std(unbiased=False) + 1e-8
        lengths = [len(window) * len(agents) for window in windows]
        stats, skipped = dict(actor=list(), critic=list()), 0

        for _ in range(epochs):
            order = torch.randperm(len(windows), generator=generator).tolist()
            for batch in minibatches(lengths, batch_size, order):
                selected = [windows[index] for index in batch]
                logits, values = self._evaluate(selected, agents)
                advantages = self._gather(selected, agents, "advantages")
                if normalize_advantages:
                    advantages = (advantages - mean) / std
                try:
                    objective = actor_loss(
                        logits,
                        self._gather(selected, agents, "actions", torch.long),
                        self._gather(selected, agents, "log_probs"),
                        advantages,
                        clip,
                        entropy_coef,
                    )
                    loss = critic_loss(values, self._gather(selected, agents, "values"), self._gather(selected, agents, "returns"), clip)
                    actor_params, critic_params = list(self.actor.parameters()), list(self.critic.parameters())
                    actor_grads = backward(-objective, actor_params)
                    critic_grads = backward(loss, critic_params)
                except NonFiniteError as e:
                    logger.warning(f"Skipping update: {e}")
                    skipped += 1
                    continue
                adam_step(self.actor_optimizer, actor_params, actor_grads)
                adam_step(self.critic_optimizer, critic_params, critic_grads)
                stats["actor"].append(objective.item())
                stats["critic"].append(loss.item())

        self.snapshot()
        return dict(
            actor_objective=float(np.mean(stats["actor"])) if stats["actor"] else np.nan,
            critic_loss=float(np.mean(stats["critic"])) if stats["critic"] else np.nan,
            skipped=skipped,
        )
