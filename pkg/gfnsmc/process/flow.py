import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from gfnsmc.autodiff import DTYPE, MLP

logger = logging.getLogger(__name__)


class FlowModel(nn.Module):
    """
    Learnt intermediate log-flows :math:`\\log F_n^\\phi`, used as twisted SMC
    targets and as the flows of subtrajectory balance.

    For continuous processes the flow corrects a geometric annealing path,

    .. math ::
        \\log F_n(x) = (1 - \\beta_n) \\log p_0(x) + \\beta_n \\log R(x)
        + \\log \\tilde F_\\phi(x, n),

    with :math:`\\beta_n` the cumulative softplus of the raw parameters
    ``raw_schedule``, normalised to end at 1. For sequence processes the
    intermediate states are partial strings on which neither density is
    defined, so the flow is the correction network alone. In both cases
    :math:`F_0 = p_0` and :math:`F_N = R` exactly.

    Parameters
    ----------
    process : GenerativeProcess
    hidden : int, optional, default=64
    activation : str, optional, default="gelu"
    final_scale : float, optional, default=0.01
    learn_schedule : bool, optional, default=True
        If ``False`` the schedule stays linear, :math:`\\beta_n = n / N`.
    learn_correction : bool, optional, default=True
        If ``False`` there is no correction network.
    generator : torch.Generator, optional
    """

    def __init__(
        self,
        process,
        hidden=64,
        activation="gelu",
        final_scale=0.01,
        learn_schedule=True,
        learn_correction=True,
        generator=None,
    ):
        super().__init__()
        self.n_steps = process.n_steps
        self.geometric = not process.is_discrete
        # softplus(log(e - 1)) = 1, so equal raw values give a linear schedule
        self.raw_schedule = nn.Parameter(
            torch.full((self.n_steps,), np.log(np.e - 1.0), dtype=DTYPE),
            requires_grad=bool(learn_schedule),
        )
        if learn_correction:
            self.correction = MLP(
                process.feature_dim, 1, hidden, activation, final_scale, generator
            )
        else:
            self.correction = None

    def beta_schedule(self):
        """
        Annealing schedule :math:`\\beta_0, \\ldots, \\beta_N`.

        Returns
        -------
        torch.Tensor
            ``(N + 1,)`` strictly increasing values from 0 to 1, differentiable
            with respect to ``raw_schedule``.
        """
        increments = torch.cumsum(F.softplus(self.raw_schedule), dim=0)
        zero = torch.zeros(1, dtype=DTYPE)
        return torch.cat([zero, increments / increments[-1]])

    def log_value(self, process, x, n):
        """
        :math:`\\log F_n(x)` for states ``x`` at step ``n``, shape ``(K,)``.
        """
        if n == 0:
            return process.log_p0(x)
        if n == self.n_steps:
            return process.log_reward(x)
        if self.correction is not None:
            value = self.correction(process.features(x, n)).squeeze(-1)
        else:
            value = torch.zeros(len(x), dtype=DTYPE)
        if self.geometric:
            beta = self.beta_schedule()[n]
            value = value + (1.0 - beta) * process.log_p0(x) + beta * process.log_reward(x)
        return value

    def log_values(self, process, states, steps):
        """
        Log-flows of trajectory ``states`` at each step in ``steps``.

        Returns
        -------
        torch.Tensor
            ``(K, len(steps))``.
        """
        return torch.stack([self.log_value(process, states[:, n], n) for n in steps], 1)

    def named_groups(self):
        """Parameters split into the ``flow`` and ``schedule`` optimiser groups."""
        correction = []
        if self.correction is not None:
            correction = [
                (f"correction.{name}", parameter)
                for name, parameter in self.correction.named_parameters()
            ]
        return {"flow": correction, "schedule": [("raw_schedule", self.raw_schedule)]}


def flow_log_value(flow, process, x, n):
    """:math:`\\log F_n(x)`; see :meth:`FlowModel.log_value`."""
    return flow.log_value(process, x, n)


def beta_schedule(flow):
    """:math:`\\beta_0, \\ldots, \\beta_N`; see :meth:`FlowModel.beta_schedule`."""
    return flow.beta_schedule()
