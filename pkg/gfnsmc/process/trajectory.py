import logging
from enum import Enum

import numpy as np
import torch

from gfnsmc.exceptions import ContractError

logger = logging.getLogger(__name__)


class Provenance(Enum):
    """
    Where the trajectories of a batch came from.
    """

    ON_POLICY = "on_policy"
    SMC = "smc"
    BUFFER = "buffer"
    TARGET = "target"


class TrajectoryBatch(object):
    """
    A batch of ``K`` latent chains :math:`x_0, \\ldots, x_N` with their
    per-step log-densities.

    ``states`` is a ``(K, N + 1, d)`` float tensor for the diffusion process and
    a ``(K, N + 1, N)`` integer array of padded token ids for the prepend/append
    process. ``log_fwd[:, n]`` is :math:`\\log p_\\theta(x_{n+1} \\mid x_n)` at
    the time the batch was built and ``log_back[:, n]`` is
    :math:`\\log p_{back}(x_n \\mid x_{n+1})`. All log quantities are detached
    float64 tensors; losses rescore ``log_fwd`` under the current parameters.

    .. note ::
        A single trajectory is a batch with ``K = 1``; index a batch with an
        integer or an index array to get sub-batches.
    """

    def __init__(self, states, log_fwd, log_back, log_p0, log_r, provenance):
        self.states = states
        self.log_fwd = log_fwd
        self.log_back = log_back
        self.log_p0 = log_p0
        self.log_r = log_r
        self.provenance = Provenance(provenance)
        self.check()

    def check(self):
        """Check the shape invariants: ``N + 1`` states and ``N`` steps per chain."""
        count, length = self.states.shape[0], self.states.shape[1]
        for name in ("log_fwd", "log_back"):
            value = getattr(self, name)
            if tuple(value.shape) != (count, length - 1):
                raise ContractError(
                    f"{name} has shape {tuple(value.shape)}, "
                    f"expected {(count, length - 1)}."
                )
        for name in ("log_p0", "log_r"):
            value = getattr(self, name)
            if tuple(value.shape) != (count,):
                raise ContractError(f"{name} has shape {tuple(value.shape)}.")

    @property
    def batch_size(self) -> int:
        """int: Number of trajectories ``K``."""
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        """int: Number of transitions ``N``."""
        return self.states.shape[1] - 1

    @property
    def terminal(self):
        """The terminal states :math:`x_N`."""
        return self.states[:, -1]

    def step_states(self, n):
        """The states :math:`x_n` of every trajectory."""
        return self.states[:, n]

    @property
    def log_weights(self):
        """
        torch.Tensor: Annealed importance log-weights,
        :math:`\\log R(x_N) + \\sum \\log p_{back} - \\log p_0(x_0) - \\sum \\log p_\\theta`.
        """
        return (
            self.log_r
            + self.log_back.sum(-1)
            - self.log_p0
            - self.log_fwd.sum(-1)
        )

    def __len__(self):
        return self.batch_size

    def __getitem__(self, index):
        if isinstance(index, int):
            index = [index]
        if isinstance(self.states, np.ndarray):
            states = self.states[np.asarray(index)]
        else:
            states = self.states[torch.as_tensor(index)]
        index = torch.as_tensor(index)
        return TrajectoryBatch(
            states,
            self.log_fwd[index],
            self.log_back[index],
            self.log_p0[index],
            self.log_r[index],
            self.provenance,
        )
