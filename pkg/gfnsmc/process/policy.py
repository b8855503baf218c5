import logging

import torch
from torch import nn

from gfnsmc.autodiff import DTYPE, MLP
from gfnsmc.exceptions import ConfigError

logger = logging.getLogger(__name__)


class Policy(nn.Module):
    """
    Forward policy parameters :math:`\\theta` and the learnt normaliser
    :math:`\\log Z_\\theta`.

    For the diffusion process ``drift`` outputs the drift correction
    :math:`\\tilde f_\\theta(x, t)`; with ``langevin=True`` a second network
    ``langevin_scale`` maps :math:`t` to the scalar multiplying the target
    score. For the prepend/append process ``drift`` outputs the ``2|V|`` action
    logits.

    Parameters
    ----------
    in_dim : int
        Input features (state plus time channel).
    out_dim : int
        Output dimension of ``drift``.
    hidden : int, optional, default=64
        Hidden width ``H``.
    activation : str, optional, default="gelu"
    final_scale : float, optional, default=0.01
    langevin : bool, optional, default=False
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
        langevin=False,
        generator=None,
    ):
        super().__init__()
        self.drift = MLP(in_dim, out_dim, hidden, activation, final_scale, generator)
        if langevin:
            self.langevin_scale = MLP(1, 1, hidden, activation, final_scale, generator)
        else:
            self.langevin_scale = None
        self.log_z = nn.Parameter(torch.zeros((), dtype=DTYPE))

    @property
    def langevin(self) -> bool:
        """bool: Whether the drift includes a scaled target score."""
        return self.langevin_scale is not None

    def named_groups(self):
        """
        Parameters split into the ``policy`` and ``log_z`` optimiser groups.

        Returns
        -------
        dict
            ``group name -> list of (name, parameter)``.
        """
        networks = [
            (name, parameter)
            for name, parameter in self.named_parameters()
            if name != "log_z"
        ]
        return {"policy": networks, "log_z": [("log_z", self.log_z)]}


class ExplorationPolicy(object):
    """
    Behaviour policy that replaces the action distribution of ``policy`` by the
    uniform distribution over actions with probability ``epsilon`` per step.

    Only sampling is affected; trajectories are scored under ``policy``.
    """

    def __init__(self, policy, epsilon):
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}.")
        self.policy = policy
        self.epsilon = float(epsilon)


def unwrap_behaviour(behaviour):
    """Split a behaviour policy into ``(policy, epsilon)``."""
    if isinstance(behaviour, ExplorationPolicy):
        return behaviour.policy, behaviour.epsilon
    return behaviour, 0.0
