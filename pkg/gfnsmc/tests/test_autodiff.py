"""
Tests the tape, the MLP and the grouped Adam optimiser.
"""
import numpy as np
import pytest
import torch
from pytest import approx
from torch import nn

from gfnsmc import log
from gfnsmc.autodiff import (
    DTYPE,
    MLP,
    Optimiser,
    Tape,
    adam_step,
    backward,
    mlp_forward,
    parameter_count,
)
from gfnsmc.exceptions import ContractError, InputError, TrainingError

log.config_root_logger(verbose=True)


def test_tape_simple_gradients():
    tape = Tape()
    x = tape.watch("x", torch.tensor(3.0, dtype=DTYPE, requires_grad=True))
    assert float(backward(tape, x)["x"]) == approx(1.0)
    assert float(backward(tape, x ** 2)["x"]) == approx(6.0)


def test_tape_unused_leaf_and_errors():
    tape = Tape()
    x = tape.watch("x", torch.tensor(1.0, dtype=DTYPE, requires_grad=True))
    tape.watch("y", torch.tensor(2.0, dtype=DTYPE, requires_grad=True))
    grads = tape.backward(3 * x)
    assert grads["y"] is None
    assert tape.names == ["x", "y"]
    with pytest.raises(ContractError):
        tape.backward(torch.stack([x, x]))
    with pytest.raises(ContractError):
        tape.watch("z", torch.tensor(1.0, dtype=DTYPE))


def test_mlp_zero_weights_give_output_bias():
    net = MLP(3, 2, hidden=8)
    with torch.no_grad():
        for layer in net.linear_layers():
            layer.weight.zero_()
    x = torch.randn(5, 3, dtype=DTYPE)
    out = mlp_forward(net, x)
    bias = net.linear_layers()[-1].bias
    assert torch.allclose(out, bias.expand(5, 2))


def test_mlp_parameter_count():
    net = MLP(4, 3, hidden=16)
    assert net.n_parameters == parameter_count(4, 16, 3)
    assert net.n_parameters == 5 * 16 + 17 * 16 + 17 * 3


def test_mlp_initialisation_is_seeded():
    a = MLP(3, 1, hidden=8, generator=torch.Generator().manual_seed(0))
    b = MLP(3, 1, hidden=8, generator=torch.Generator().manual_seed(0))
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    last = a.linear_layers()[-1]
    assert float(last.weight.abs().max()) <= 0.01 / np.sqrt(8)


def test_mlp_errors():
    net = MLP(3, 1, hidden=4)
    with pytest.raises(InputError):
        net(torch.zeros(2, 4, dtype=DTYPE))
    with pytest.raises(InputError):
        MLP(3, 1, activation="relu6")


def test_mlp_gradient_matches_finite_differences():
    net = MLP(3, 1, hidden=5, activation="tanh", final_scale=1.0)
    x = torch.as_tensor(np.random.default_rng(0).normal(size=(4, 3)), dtype=DTYPE)
    tape = Tape()
    output = mlp_forward(net, x, tape).sum()
    grads = backward(tape, output)
    step = 1e-6
    for name, parameter in net.named_parameters():
        grad = grads[f"mlp.{name}"].reshape(-1)
        flat = parameter.data.view(-1)
        for i in range(0, flat.numel(), 3):
            original = float(flat[i])
            with torch.no_grad():
                flat[i] = original + step
                plus = float(net(x).sum())
                flat[i] = original - step
                minus = float(net(x).sum())
                flat[i] = original
            fd = (plus - minus) / (2 * step)
            assert float(grad[i]) == approx(fd, rel=1e-5, abs=1e-8)


def _scalar_optimiser(value, lr=0.1, grad_clip=None):
    p = nn.Parameter(torch.tensor(value, dtype=DTYPE))
    return p, Optimiser({"policy": [("p", p)]}, {"policy": lr}, grad_clip)


def test_adam_zero_gradient():
    p, optimiser = _scalar_optimiser([1.0, -2.0])
    adam_step(optimiser, {"policy.p": torch.zeros(2, dtype=DTYPE)})
    assert p.tolist() == [1.0, -2.0]
    assert optimiser.step_count(p) == 1


def test_adam_first_step_moves_by_learning_rate():
    p, optimiser = _scalar_optimiser([0.0, 0.0, 0.0], lr=0.1)
    adam_step(optimiser, {"policy.p": torch.tensor([2.0, -3.0, 0.5], dtype=DTYPE)})
    assert p.detach().numpy() == approx([-0.1, 0.1, -0.1], rel=1e-6)


def test_adam_descends_a_quadratic():
    p, optimiser = _scalar_optimiser([1.0], lr=0.1)
    losses = []
    for _ in range(3):
        losses.append(0.5 * float(p[0]) ** 2)
        adam_step(optimiser, {"policy.p": p.detach().clone()})
    losses.append(0.5 * float(p[0]) ** 2)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_optimiser_groups_and_errors():
    p, optimiser = _scalar_optimiser([1.0])
    assert optimiser.group_names == ["policy"]
    with pytest.raises(ContractError):
        adam_step(optimiser, {"policy.q": torch.zeros(1, dtype=DTYPE)})
    with pytest.raises(InputError):
        adam_step(optimiser, {"policy.p": torch.zeros(2, dtype=DTYPE)})
    with pytest.raises(TrainingError):
        adam_step(optimiser, {"policy.p": torch.tensor([np.nan], dtype=DTYPE)})
    frozen = nn.Parameter(torch.zeros(1, dtype=DTYPE), requires_grad=False)
    with pytest.raises(ContractError):
        Optimiser({"flow": [("frozen", frozen)]}, {"flow": 0.1})


def test_optimiser_gradient_clipping():
    p, optimiser = _scalar_optimiser([0.0, 0.0], grad_clip=1.0)
    p.grad = torch.tensor([30.0, 40.0], dtype=DTYPE)
    assert optimiser.clip_gradients() == ["policy"]
    assert float(p.grad.norm()) == approx(1.0)


def test_optimiser_state_round_trip():
    p, optimiser = _scalar_optimiser([1.0, 2.0])
    adam_step(optimiser, {"policy.p": torch.tensor([0.3, -0.1], dtype=DTYPE)})
    state = optimiser.state_dict()
    assert set(state) == {"policy.p"}

    q, restored = _scalar_optimiser(p.tolist())
    restored.load_state_dict(state)
    grad = {"policy.p": torch.tensor([0.2, 0.4], dtype=DTYPE)}
    adam_step(optimiser, grad)
    adam_step(restored, grad)
    assert torch.equal(p, q)
    assert restored.step_count(q) == 2
