"""
Learning substrate: a recording tape over torch autograd, the two-hidden-layer
MLP used by every parametrised component, and a grouped Adam optimiser.

All parameters and activations are ``torch.float64``.
"""
import logging
from collections import OrderedDict

import numpy as np
import torch
from torch import nn

from gfnsmc.exceptions import ContractError, InputError, TrainingError

logger = logging.getLogger(__name__)

DTYPE = torch.float64

ACTIVATIONS = {
    "gelu": nn.GELU,
    "silu": nn.SiLU,
    "softplus": nn.Softplus,
    "tanh": nn.Tanh,
}


class Tape(object):
    """
    Named view of the leaves of a torch autograd graph.

    Torch records every operation on tensors that require gradients; the tape
    only keeps track of which leaves the caller wants gradients for, under
    stable names, so that gradient maps can be inspected (for instance to check
    that a loss does not reach a parameter group).
    """

    def __init__(self):
        self._leaves = OrderedDict()

    @property
    def names(self):
        """list: Names of the watched leaves, in insertion order."""
        return list(self._leaves)

    def watch(self, name, tensor):
        """Register ``tensor`` (a leaf requiring gradients) under ``name``."""
        if not tensor.requires_grad:
            raise ContractError(f"Leaf {name} does not require gradients.")
        self._leaves[name] = tensor
        return tensor

    def watch_module(self, prefix, module):
        """Register every parameter of ``module`` as ``<prefix>.<parameter name>``."""
        for name, parameter in module.named_parameters():
            if parameter.requires_grad:
                self.watch(f"{prefix}.{name}", parameter)

    def backward(self, output):
        """
        Gradients of a scalar with respect to every watched leaf.

        Parameters
        ----------
        output : torch.Tensor
            A tensor with exactly one element.

        Returns
        -------
        collections.OrderedDict
            ``name -> gradient``; leaves that do not influence ``output`` map
            to ``None``.
        """
        if output.numel() != 1:
            raise ContractError(
                f"Backward needs a scalar output, got shape {tuple(output.shape)}."
            )
        grads = torch.autograd.grad(
            output.reshape(()),
            list(self._leaves.values()),
            allow_unused=True,
            retain_graph=True,
        )
        return OrderedDict(zip(self._leaves, grads))


class MLP(nn.Module):
    """
    Two hidden layers of width ``hidden`` with a smooth activation.

    Weights and biases are drawn uniformly in :math:`\\pm 1/\\sqrt{\\text{fan-in}}`
    from ``generator``; the output layer is then multiplied by ``final_scale``
    so that a freshly built drift is close to zero.

    Parameters
    ----------
    in_dim : int
        Input dimension.
    out_dim : int
        Output dimension.
    hidden : int, optional, default=64
        Width ``H`` of both hidden layers.
    activation : str, optional, default="gelu"
        One of :data:`ACTIVATIONS`.
    final_scale : float, optional, default=0.01
        Multiplier applied to the initial output layer.
    generator : torch.Generator, optional
        Source of the initial weights.
    """

    def __init__(
        self,
        in_dim,
        out_dim,
        hidden=64,
        activation="gelu",
        final_scale=0.01,
        generator=None,
    ):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise InputError(
                f"Unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}."
            )
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.hidden = int(hidden)
        self.net = nn.Sequential(
            nn.Linear(self.in_dim, self.hidden, dtype=DTYPE),
            ACTIVATIONS[activation](),
            nn.Linear(self.hidden, self.hidden, dtype=DTYPE),
            ACTIVATIONS[activation](),
            nn.Linear(self.hidden, self.out_dim, dtype=DTYPE),
        )
        self.reset_parameters(generator, final_scale)

    def linear_layers(self):
        """list: The three ``nn.Linear`` layers in order."""
        return [layer for layer in self.net if isinstance(layer, nn.Linear)]

    def reset_parameters(self, generator=None, final_scale=0.01):
        with torch.no_grad():
            for layer in self.linear_layers():
                bound = 1.0 / np.sqrt(layer.in_features)
                for tensor in (layer.weight, layer.bias):
                    noise = torch.rand(tensor.shape, generator=generator, dtype=DTYPE)
                    tensor.copy_((2 * noise - 1) * bound)
            last = self.linear_layers()[-1]
            last.weight.mul_(final_scale)
            last.bias.mul_(final_scale)

    @property
    def n_parameters(self) -> int:
        """int: Total number of scalar parameters."""
        return sum(p.numel() for p in self.parameters())

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise InputError(
                f"MLP expects inputs of dimension {self.in_dim}, got {x.shape[-1]}."
            )
        return self.net(x)


def parameter_count(in_dim, hidden, out_dim):
    """Number of parameters of an :class:`MLP`: ``(in+1)H + (H+1)H + (H+1)out``."""
    return (in_dim + 1) * hidden + (hidden + 1) * hidden + (hidden + 1) * out_dim


def mlp_forward(params, x, tape=None):
    """
    Evaluate ``params`` on ``x``, registering its parameters on ``tape``.

    Parameters
    ----------
    params : MLP
        The network.
    x : torch.Tensor
        Inputs of shape ``(..., in_dim)``.
    tape : Tape, optional
        If given, every parameter is watched as ``mlp.<name>``.

    Returns
    -------
    torch.Tensor
        Outputs of shape ``(..., out_dim)``.
    """
    if tape is not None:
        tape.watch_module("mlp", params)
    return params(torch.as_tensor(x, dtype=DTYPE))


def backward(tape, output):
    """Gradient map of the scalar ``output``; see :meth:`Tape.backward`."""
    return tape.backward(output)


class Optimiser(object):
    """
    Adam over named parameter groups, each with its own learning rate.

    The sampler uses four groups: ``policy`` (drift networks), ``log_z``,
    ``flow`` (correction network) and ``schedule`` (raw annealing parameters).
    Before every step the gradients are checked for non-finite entries and the
    global norm of each group is clipped to ``grad_clip``.

    Parameters
    ----------
    groups : dict
        ``group name -> iterable of (parameter name, torch.nn.Parameter)``.
        Empty groups are dropped.
    learning_rates : dict
        ``group name -> learning rate``.
    grad_clip : float or None, optional, default=10.0
        Maximum gradient norm per group; ``None`` disables clipping.
    """

    def __init__(self, groups, learning_rates, grad_clip=10.0):
        self.grad_clip = grad_clip
        self._names = {}
        param_groups = []
        for group_name, named_parameters in groups.items():
            parameters = []
            for name, parameter in named_parameters:
                if not parameter.requires_grad:
                    continue
                self._names[id(parameter)] = f"{group_name}.{name}"
                parameters.append(parameter)
            if not parameters:
                continue
            param_groups.append(
                {
                    "params": parameters,
                    "lr": float(learning_rates[group_name]),
                    "name": group_name,
                }
            )
        if not param_groups:
            raise ContractError("The optimiser received no trainable parameters.")
        self.adam = torch.optim.Adam(param_groups, betas=(0.9, 0.999), eps=1e-8)
        self.clipped = []

    @property
    def group_names(self):
        """list: Names of the non-empty parameter groups."""
        return [group["name"] for group in self.adam.param_groups]

    def parameter_name(self, parameter):
        return self._names[id(parameter)]

    def zero_grad(self):
        self.adam.zero_grad(set_to_none=True)

    def check_gradients(self):
        """Raise :class:`TrainingError` naming the first non-finite gradient."""
        for group in self.adam.param_groups:
            for parameter in group["params"]:
                if parameter.grad is None:
                    continue
                if not torch.isfinite(parameter.grad).all():
                    raise TrainingError(
                        f"Non-finite gradient for parameter "
                        f"{self.parameter_name(parameter)}."
                    )

    def clip_gradients(self):
        """Clip the gradient norm of every group; return the names of clipped groups."""
        self.clipped = []
        if self.grad_clip is None:
            return self.clipped
        for group in self.adam.param_groups:
            parameters = [p for p in group["params"] if p.grad is not None]
            if not parameters:
                continue
            norm = torch.nn.utils.clip_grad_norm_(parameters, self.grad_clip)
            if norm > self.grad_clip:
                logger.debug(
                    f"Clipped gradient of group {group['name']} "
                    f"(norm {float(norm):.3g} > {self.grad_clip})"
                )
                self.clipped.append(group["name"])
        return self.clipped

    def step(self):
        self.check_gradients()
        self.clip_gradients()
        self.adam.step()

    def step_count(self, parameter):
        """int: Number of Adam steps applied to ``parameter`` so far."""
        state = self.adam.state.get(parameter, {})
        return int(state["step"]) if "step" in state else 0

    def state_dict(self):
        """
        Moments and step counters as numpy arrays, keyed by parameter name.

        Returns
        -------
        dict
            ``parameter name -> {"step", "exp_avg", "exp_avg_sq"}``.
        """
        state = {}
        for group in self.adam.param_groups:
            for parameter in group["params"]:
                if parameter not in self.adam.state:
                    continue
                state[self.parameter_name(parameter)] = {
                    key: value.detach().cpu().numpy().copy()
                    for key, value in self.adam.state[parameter].items()
                }
        return state

    def load_state_dict(self, state):
        """Restore the output of :meth:`state_dict`; learning rates are kept."""
        by_name = {
            self.parameter_name(p): p
            for group in self.adam.param_groups
            for p in group["params"]
        }
        unknown = sorted(set(state) - set(by_name))
        if unknown:
            raise ContractError(f"Optimiser state for unknown parameters: {unknown}.")
        self.adam.state.clear()
        for name, entry in state.items():
            self.adam.state[by_name[name]] = {
                key: torch.tensor(np.array(value)) for key, value in entry.items()
            }


def adam_step(optimiser, grads):
    """
    Apply one Adam update from an explicit gradient map.

    Parameters
    ----------
    optimiser : Optimiser
        The optimiser holding the parameters and their moments.
    grads : dict
        ``parameter name -> gradient`` (names as in :meth:`Optimiser.state_dict`).
        Parameters without an entry are left untouched.
    """
    by_name = {
        optimiser.parameter_name(p): p
        for group in optimiser.adam.param_groups
        for p in group["params"]
    }
    optimiser.zero_grad()
    for name, grad in grads.items():
        if name not in by_name:
            raise ContractError(f"No parameter named {name}.")
        parameter = by_name[name]
        if grad.shape != parameter.shape:
            raise InputError(
                f"Gradient for {name} has shape {tuple(grad.shape)}, "
                f"expected {tuple(parameter.shape)}."
            )
        parameter.grad = torch.as_tensor(grad, dtype=parameter.dtype).clone()
    optimiser.step()
