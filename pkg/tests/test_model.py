from math import log

import numpy as np
import pytest
import torch

from stlmarl.model import (
    Actor,
    Critic,
    DenseLayer,
    NonFiniteError,
    RecurrentCell,
    RecurrentNetwork,
    adam_step,
    backward,
    categorical_sample,
    entropy,
    forward_policy,
    greedy_action,
    load_metadata,
    load_parameters,
    log_prob,
    make_optimizer,
    orthogonal_init,
    save_parameters,
)
from stlmarl.util import DTYPE, Generators

def generator(seed=0):
    return torch.Generator().manual_seed(seed)

def test_orthogonal_init():
    square = orthogonal_init(4, 4, generator=generator())
    torch.testing.assert_close(square @ square.T, torch.eye(4, dtype=DTYPE), atol=1e-6, rtol=0)
    wide = orthogonal_init(2, 6, gain=2, generator=generator())
    torch.testing.assert_close(wide @ wide.T, 4 * torch.eye(2, dtype=DTYPE), atol=1e-6, rtol=0)
    tall = orthogonal_init(6, 2, generator=generator())
    torch.testing.assert_close(tall.T @ tall, torch.eye(2, dtype=DTYPE), atol=1e-6, rtol=0)
    assert torch.equal(orthogonal_init(3, 5, generator=generator(7)), orthogonal_init(3, 5, generator=generator(7)))
    with pytest.raises(ValueError):
        orthogonal_init(0, 3)

def test_initialization_is_deterministic():
    first = Actor(5, 4, 8, Generators.from_seed(3).torch)
    second = Actor(5, 4, 8, Generators.from_seed(3).torch)
    for a, b in zip(first.parameters(), second.parameters()):
        assert torch.equal(a, b)
    obs = torch.randn(2, 6, 5, dtype=DTYPE, generator=generator())
    assert torch.equal(forward_policy(first, obs)[0], forward_policy(second, obs)[0])

def test_zero_weights_give_uniform_policy():
    actor = Actor(3, 5, 4)
    with torch.no_grad():
        for parameter in actor.parameters():
            parameter.zero_()
    logits, hidden = forward_policy(actor, torch.randn(7, 3, dtype=DTYPE, generator=generator()))
    assert logits.shape == (7, 5) and hidden.shape == (4,)
    assert torch.equal(logits, torch.zeros(7, 5, dtype=DTYPE))

def test_forward_matches_direct_recursion():
    actor = Actor(3, 4, 5, generator(1))
    obs = torch.randn(6, 3, dtype=DTYPE, generator=generator(2))
    hidden_in = torch.randn(5, dtype=DTYPE, generator=generator(3))
    logits, hidden_out = forward_policy(actor, obs, hidden_in)

    w_x, w_h, b = (p.detach().numpy() for p in (actor.cell.input_weight, actor.cell.hidden_weight, actor.cell.bias))
    w_o, b_o = actor.head.weight.detach().numpy(), actor.head.bias.detach().numpy()
    h, expected = hidden_in.numpy(), list()
    for x in obs.numpy():
        h = np.tanh(w_x @ x + w_h @ h + b)
        expected.append(w_o @ h + b_o)
    np.testing.assert_allclose(logits.detach().numpy(), np.stack(expected), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(hidden_out.detach().numpy(), h, rtol=1e-12, atol=1e-14)

def test_zero_hidden_size_is_feed_forward():
    network = RecurrentNetwork(3, 2, hidden_size=0, generator=generator())
    assert network.cell is None
    inputs = torch.randn(4, 3, dtype=DTYPE, generator=generator(1))
    with torch.no_grad():
        outputs, _ = network(inputs)
        torch.testing.assert_close(outputs, inputs @ network.head.weight.T + network.head.bias)

def test_batched_forward_and_critic():
    critic = Critic(6, 8, generator())
    values, hidden = critic(torch.randn(3, 5, 6, dtype=DTYPE, generator=generator(1)))
    assert values.shape == (3, 5) and hidden.shape == (3, 8)
    single, _ = critic(torch.randn(3, 5, 6, dtype=DTYPE, generator=generator(1))[1])
    torch.testing.assert_close(single, values[1])

def test_dimension_mismatch():
    actor = Actor(3, 2, 4)
    with pytest.raises(ValueError):
        actor(torch.zeros(5, 4, dtype=DTYPE))
    with pytest.raises(ValueError):
        actor(torch.zeros(5, 3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))
    with pytest.raises(ValueError):
        DenseLayer(2, 2, activation="softplus")

def test_saturated_sample():
    logits = torch.tensor([1000.0, 0.0], dtype=DTYPE)
    for seed in range(20):
        action, log_p = categorical_sample(logits, generator(seed))
        assert action.item() == 0 and log_p.item() == pytest.approx(0.0, abs=1e-12)
    assert greedy_action(torch.tensor([[0.0, 2.0, 1.0]])).tolist() == [1]

def test_log_prob_of_sample():
    logits = torch.randn(10, 4, dtype=DTYPE, generator=generator())
    actions, log_probs = categorical_sample(logits, generator(1))
    torch.testing.assert_close(log_probs, torch.log_softmax(logits, -1)[torch.arange(10), actions])
    torch.testing.assert_close(log_prob(logits, actions), log_probs)

def test_uniform_sampling_chi_square():
    k, draws = 5, 100_000
    actions, _ = categorical_sample(torch.zeros(draws, k, dtype=DTYPE), generator(0))
    counts = torch.bincount(actions, minlength=k).to(DTYPE)
    expected = draws / k
    # critical value of chi-square with 4 degrees of freedom at 0.01
    assert ((counts - expected) ** 2 / expected).sum().item() < 13.277

def test_non_finite_logits():
    with pytest.raises(NonFiniteError):
        categorical_sample(torch.tensor([float("nan"), 0.0], dtype=DTYPE))

def test_entropy():
    for k in (2, 5, 9):
        assert entropy(torch.zeros(k, dtype=DTYPE)).item() == pytest.approx(log(k))
    values = entropy(10 * torch.randn(100, 5, dtype=DTYPE, generator=generator()))
    assert (values >= 0).all() and (values <= log(5) + 1e-12).all()


def finite_differences(loss_fn, parameters, step=1e-5):
    gradients = list()
    with torch.no_grad():
        for parameter in parameters:
            gradient = torch.zeros_like(parameter)
            flat, flat_gradient = parameter.view(-1), gradient.view(-1)
            for index in range(flat.numel()):
                original = flat[index].item()
                flat[index] = original + step
                upper = loss_fn().item()
                flat[index] = original - step
                lower = loss_fn().item()
                flat[index] = original
                flat_gradient[index] = (upper - lower) / (2 * step)
            gradients.append(gradient)
    return gradients

def assert_gradients_match(loss_fn, parameters):
    parameters = list(parameters)
    analytic = backward(loss_fn(), parameters)
    for exact, approximate in zip(analytic, finite_differences(loss_fn, parameters)):
        torch.testing.assert_close(exact, approximate, rtol=1e-4, atol=1e-8)

def test_recurrent_gradients_match_finite_differences():
    for seed in range(3):
        actor = Actor(3, 4, 5, generator(seed))
        obs = torch.randn(2, 6, 3, dtype=DTYPE, generator=generator(seed + 10))
        actions = torch.randint(4, (2, 6), generator=generator(seed + 20))
        weights = torch.randn(2, 6, dtype=DTYPE, generator=generator(seed + 30))

        def loss_fn():
            logits, _ = actor(obs)
            return (weights * log_prob(logits, actions)).sum() + 0.1 * entropy(logits).sum()

        assert_gradients_match(loss_fn, actor.parameters())

def test_dense_and_critic_gradients_match_finite_differences():
    layer = DenseLayer(4, 3, activation="tanh", generator=generator())
    critic = Critic(4, 0, generator(1))
    inputs = torch.randn(5, 4, dtype=DTYPE, generator=generator(2))
    assert_gradients_match(lambda: layer(inputs).pow(2).sum(), layer.parameters())
    assert_gradients_match(lambda: critic(inputs)[0].pow(2).mean(), critic.parameters())

def randomized(module, seed):
    with torch.no_grad():
        for index, parameter in enumerate(module.parameters()):
            parameter.copy_(torch.randn(parameter.shape, dtype=DTYPE, generator=generator(seed + 100 * index)))
    return module

def dense_loss(seed):
    layer = randomized(DenseLayer(3, 2, activation="tanh"), seed)
    inputs = torch.randn(4, 3, dtype=DTYPE, generator=generator(seed + 1000))
    return lambda: layer(inputs).pow(2).sum(), layer.parameters()

def recurrent_loss(seed):
    cell = randomized(RecurrentCell(2, 3), seed)
    inputs = torch.randn(4, 2, dtype=DTYPE, generator=generator(seed + 1000))
    weights = torch.randn(3, dtype=DTYPE, generator=generator(seed + 2000))

    def loss_fn():
        hidden = torch.zeros(3, dtype=DTYPE)
        for x in inputs:
            hidden = cell(x, hidden)
        return weights @ hidden
    return loss_fn, cell.parameters()

def log_prob_loss(seed):
    layer = randomized(DenseLayer(3, 4), seed)
    inputs = torch.randn(5, 3, dtype=DTYPE, generator=generator(seed + 1000))
    actions = torch.randint(4, (5,), generator=generator(seed + 2000))
    weights = torch.randn(5, dtype=DTYPE, generator=generator(seed + 3000))
    return lambda: (weights * log_prob(layer(inputs), actions)).sum(), layer.parameters()

def entropy_loss(seed):
    layer = randomized(DenseLayer(3, 4), seed)
    inputs = torch.randn(5, 3, dtype=DTYPE, generator=generator(seed + 1000))
    return lambda: entropy(layer(inputs)).sum(), layer.parameters()

@pytest.mark.parametrize("build", [dense_loss, recurrent_loss, log_prob_loss, entropy_loss])
def test_gradients_at_random_points(build):
    for seed in range(100):
        assert_gradients_match(*build(seed))

def test_backward_edge_cases():
    cell = RecurrentCell(2, 3, generator())
    with torch.no_grad():
        for parameter in cell.parameters():
            parameter.zero_()
    hidden = cell(torch.zeros(2, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))
    gradients = dict(zip(("input_weight", "hidden_weight", "bias"), backward(hidden.sum(), cell.parameters())))
    torch.testing.assert_close(gradients["bias"], torch.ones(3, dtype=DTYPE))

    zero = 0.0 * sum(parameter.sum() for parameter in cell.parameters())
    assert all(torch.equal(g, torch.zeros_like(g)) for g in backward(zero, cell.parameters()))
    with pytest.raises(NonFiniteError):
        backward(cell.bias.sum() * float("inf"), cell.parameters())


def test_adam_zero_gradient_keeps_parameters():
    layer = DenseLayer(3, 2, generator=generator())
    before = [p.detach().clone() for p in layer.parameters()]
    parameters = list(layer.parameters())
    adam_step(make_optimizer(parameters), parameters, [torch.zeros_like(p) for p in parameters])
    assert all(torch.equal(a, b) for a, b in zip(before, parameters))

def test_adam_first_step_moves_against_gradient_sign():
    layer = DenseLayer(3, 2, generator=generator())
    parameters = list(layer.parameters())
    before = [p.detach().clone() for p in parameters]
    gradients = [torch.randn(p.shape, dtype=DTYPE, generator=generator(i + 1)) for i, p in enumerate(parameters)]
    adam_step(make_optimizer(parameters, 1e-3), parameters, gradients)
    for old, new, gradient in zip(before, parameters, gradients):
        torch.testing.assert_close(new.detach() - old, -1e-3 * gradient / (gradient.abs() + 1e-8), rtol=1e-6, atol=1e-12)
        assert torch.equal(torch.sign(new.detach() - old), -torch.sign(gradient))

def test_adam_constant_gradient_drift():
    layer = DenseLayer(1, 1, generator=generator())
    parameters = list(layer.parameters())
    optimizer = make_optimizer(parameters, 1e-2)
    previous = layer.weight.item()
    for _ in range(50):
        adam_step(optimizer, parameters, [torch.full_like(p, 0.5) for p in parameters])
        step = previous - layer.weight.item()
        assert 0 < step <= 1e-2 * (1 + 1e-6)
        previous = layer.weight.item()
    with pytest.raises(ValueError):
        adam_step(optimizer, parameters, [torch.zeros(3, dtype=DTYPE)] * 2)

def test_save_and_load_parameters(tmp_path):
    actor, critic = Actor(3, 4, 5, generator(0)), Critic(7, 5, generator(1))
    filename = str(tmp_path / "model.safetensors")
    save_parameters(dict(actor_0=actor, critic_0=critic), filename, metadata=dict(env="particle"))

    fresh_actor, fresh_critic = Actor(3, 4, 5, generator(2)), Critic(7, 5, generator(3))
    metadata = load_parameters(dict(actor_0=fresh_actor, critic_0=fresh_critic), filename)
    assert metadata == load_metadata(filename) == dict(env="particle")
    for module, fresh in ((actor, fresh_actor), (critic, fresh_critic)):
        for a, b in zip(module.parameters(), fresh.parameters()):
            assert torch.equal(a, b) and b.dtype == DTYPE
