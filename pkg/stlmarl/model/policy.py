"""
Small recurrent actor and critic networks on top of torch. Gradients come
from torch autograd (back-propagation through time included), parameters are
updated with torch's Adam.
"""

from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import torch
from torch import nn
from torch.distributions import Categorical
import torch.nn.functional as F

from ..util import DTYPE

class NonFiniteError(ValueError):
    pass

_ACTIVATIONS = dict(identity=lambda x: x, tanh=torch.tanh, relu=torch.relu)

def orthogonal_init(rows: int, cols: int, gain: float = 1.0, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """
    A `rows x cols` matrix with orthonormal rows (rows <= cols) or columns
    (otherwise), scaled by `gain`.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"Invalid matrix dimensions {rows}x{cols}!")
    return nn.init.orthogonal_(torch.empty(rows, cols, dtype=DTYPE), gain=gain, generator=generator)


class DenseLayer(nn.Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        activation: Literal["identity", "tanh", "relu"] = "identity",
        gain: float = 1.0,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"Unknown activation '{activation}'!")
        self.activation = activation
        self.weight = nn.Parameter(orthogonal_init(out_features, in_features, gain, generator))
        self.bias = nn.Parameter(torch.zeros(out_features, dtype=DTYPE))

    def forward(self, x):
        return _ACTIVATIONS[self.activation](F.linear(x, self.weight, self.bias))


class RecurrentCell(nn.Module):
    """Elman cell `h' = tanh(W_x x + W_h h + b)`."""

    def __init__(self, input_size: int, hidden_size: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.hidden_size = hidden_size
        self.input_weight = nn.Parameter(orthogonal_init(hidden_size, input_size, generator=generator))
        self.hidden_weight = nn.Parameter(orthogonal_init(hidden_size, hidden_size, generator=generator))
        self.bias = nn.Parameter(torch.zeros(hidden_size, dtype=DTYPE))

    def forward(self, x, hidden):
        return torch.tanh(F.linear(x, self.input_weight, self.bias) + F.linear(hidden, self.hidden_weight))


class RecurrentNetwork(nn.Module):
    """
    A recurrent cell over an input sequence followed by one dense layer. With
    `hidden_size=0` the cell is skipped and the network is feed-forward.
    """

    def __init__(
        self,
        input_size: int,
        output_size: int,
        hidden_size: int = 64,
        gain: float = 1.0,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.input_size, self.hidden_size = input_size, hidden_size
        self.cell = RecurrentCell(input_size, hidden_size, generator) if hidden_size else None
        self.head = DenseLayer(hidden_size or input_size, output_size, gain=gain, generator=generator)

    def initial_hidden(self, *batch_shape: int) -> torch.Tensor:
        return torch.zeros(*batch_shape, self.hidden_size, dtype=DTYPE)

    def forward(self, inputs: torch.Tensor, hidden: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Map inputs of shape `(..., steps, input_size)` and a hidden state of
        shape `(..., hidden_size)` to outputs `(..., steps, output_size)` and
        the final hidden state.
        """
        if inputs.shape[-1] != self.input_size:
            raise ValueError(f"Expected inputs of size {self.input_size}, got {inputs.shape[-1]}!")
        if hidden is None:
            hidden = self.initial_hidden(*inputs.shape[:-2])
        elif hidden.shape[-1] != self.hidden_size:
            raise ValueError(f"Expected hidden state of size {self.hidden_size}, got {hidden.shape[-1]}!")
        if self.cell is None:
            return self.head(inputs), hidden

        features = list()
        for step in inputs.unbind(-2):
            hidden = self.cell(step, hidden)
            features.append(hidden)
        return self.head(torch.stack(features, -2)), hidden

class Actor(RecurrentNetwork):
    def __init__(self, obs_dim: int, n_actions: int, hidden_size: int = 64, generator=None):
        super().__init__(obs_dim, n_actions, hidden_size, gain=0.01, generator=generator)

class Critic(RecurrentNetwork):
    def __init__(self, state_dim: int, hidden_size: int = 64, generator=None):
        super().__init__(state_dim, 1, hidden_size, gain=1.0, generator=generator)

    def forward(self, inputs, hidden=None):
        values, hidden = super().forward(inputs, hidden)
        return values.squeeze(-1), hidden

def forward_policy(actor: Actor, obs_sequence: torch.Tensor, hidden_in: Optional[torch.Tensor] = None):
    return actor(obs_sequence, hidden_in)


def categorical_sample(logits: torch.Tensor, generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Sample from `softmax(logits)` over the last dimension, returns the actions and their log-probabilities."""
    if not torch.isfinite(logits).all():
        raise NonFiniteError("Cannot sample from non-finite logits!")
    log_probs = F.log_softmax(logits, -1)
    flat = log_probs.detach().reshape(-1, logits.shape[-1]).exp()
    actions = torch.multinomial(flat, 1, generator=generator).reshape(logits.shape[:-1])
    return actions, log_probs.gather(-1, actions.unsqueeze(-1)).squeeze(-1)

def log_prob(logits: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    return F.log_softmax(logits, -1).gather(-1, actions.unsqueeze(-1)).squeeze(-1)

def entropy(logits: torch.Tensor) -> torch.Tensor:
    return Categorical(logits=logits).entropy()

def greedy_action(logits: torch.Tensor) -> torch.Tensor:
    return logits.argmax(-1)


def backward(loss: torch.Tensor, parameters: Iterable[nn.Parameter]) -> List[torch.Tensor]:
    """Reverse-mode gradients of a scalar `loss` w.r.t. every parameter (zero for unused ones)."""
    parameters = list(parameters)
    if not loss.requires_grad:
        return [torch.zeros_like(parameter) for parameter in parameters]
    if not torch.isfinite(loss):
        raise NonFiniteError(f"Loss is not finite ({loss.item()})!")
    gradients = torch.autograd.grad(loss, parameters, allow_unused=True)
    gradients = [torch.zeros_like(p) if g is None else g for p, g in zip(parameters, gradients)]
    if not all(torch.isfinite(gradient).all() for gradient in gradients):
        raise NonFiniteError("Encountered non-finite gradients!")
    return gradients

def make_optimizer(parameters: Iterable[nn.Parameter], learning_rate: float = 1e-3, betas=(0.9, 0.999), eps=1e-8):
    return torch.optim.Adam(parameters, lr=learning_rate, betas=betas, eps=eps)

def adam_step(optimizer: torch.optim.Adam, parameters: Sequence[nn.Parameter], gradients: Sequence[torch.Tensor]):
    """Apply one bias-corrected Adam update with externally computed gradients."""
    if len(parameters) != len(gradients):
        raise ValueError("Every parameter needs exactly one gradient!")
    for parameter, gradient in zip(parameters, gradients):
        if parameter.shape != gradient.shape:
            raise ValueError(f"Gradient shape {tuple(gradient.shape)} does not match parameter shape {tuple(parameter.shape)}!")
        parameter.grad = gradient.detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
