import logging

import torch

from gfnsmc.process.policy import unwrap_behaviour
from gfnsmc.process.trajectory import Provenance, TrajectoryBatch

logger = logging.getLogger(__name__)


class GenerativeProcess(object):
    """
    Base class for a hierarchical sampler with a fixed backward kernel.

    The forward policy :math:`p_\\theta(x_{n+1} \\mid x_n)` builds a state
    :math:`x_N` from :math:`x_0 \\sim p_0` in ``N`` steps; the backward kernel
    :math:`p_{back}(x_n \\mid x_{n+1})` has no parameters. Subclasses implement
    the single-step methods below; this class composes them into rollouts,
    backward trajectories and scoring.

    Step indices follow the chain: transition ``n`` maps :math:`x_n` to
    :math:`x_{n+1}` for ``0 <= n < N``.
    """

    #: str: Name used in configuration files.
    name = None

    def __init__(self, target):
        self._target = target

    @property
    def target(self):
        """Target: The unnormalised terminal density."""
        return self._target

    @property
    def n_steps(self) -> int:
        """int: Number of transitions ``N``."""
        raise NotImplementedError()

    @property
    def is_discrete(self) -> bool:
        """bool: Whether states are token sequences."""
        return False

    @property
    def feature_dim(self) -> int:
        """int: Input dimension of networks that read a state at a given step."""
        raise NotImplementedError()

    @property
    def policy_output_dim(self) -> int:
        """int: Output dimension of the forward policy network."""
        raise NotImplementedError()

    def features(self, x, n):
        """Network input for states ``x`` at step ``n`` (a ``(K, feature_dim)`` tensor)."""
        raise NotImplementedError()

    def sample_initial(self, count, generator):
        raise NotImplementedError()

    def log_p0(self, x):
        raise NotImplementedError()

    def forward_step(self, behaviour, x, n, generator):
        """
        Sample :math:`x_{n+1}` for every state in ``x``.

        Returns
        -------
        tuple
            The new states and their log-density under the (unexplored) policy.
        """
        raise NotImplementedError()

    def log_forward(self, policy, x, x_next, n):
        """Differentiable :math:`\\log p_\\theta(x_{n+1} \\mid x_n)`, shape ``(K,)``."""
        raise NotImplementedError()

    def backward_step(self, x, n, generator):
        """Sample :math:`x_n` given :math:`x_{n+1}` = ``x``."""
        raise NotImplementedError()

    def log_backward(self, x_prev, x, n):
        """:math:`\\log p_{back}(x_n \\mid x_{n+1})` with ``x_prev`` = :math:`x_n`."""
        raise NotImplementedError()

    def stack(self, states):
        """Stack a list of per-step states along a new axis 1."""
        raise NotImplementedError()

    def take(self, x, index):
        """Select states by particle index (used by resampling)."""
        raise NotImplementedError()

    def to_numpy(self, x):
        """Terminal states as a numpy array (for the replay buffer and files)."""
        raise NotImplementedError()

    def from_numpy(self, array):
        raise NotImplementedError()

    def log_reward(self, x):
        """:math:`\\log R` of terminal states, as a float64 tensor."""
        return self.target.log_r(x)

    def score_forward(self, policy, states):
        """
        Rescore every transition of ``states`` under ``policy``.

        Parameters
        ----------
        policy : Policy
            The forward policy; gradients flow into it.
        states : torch.Tensor or numpy.ndarray
            ``(K, N + 1, ...)`` trajectory states.

        Returns
        -------
        torch.Tensor
            ``(K, N)`` forward log-densities.
        """
        columns = [
            self.log_forward(policy, states[:, n], states[:, n + 1], n)
            for n in range(self.n_steps)
        ]
        return torch.stack(columns, dim=1)

    def rollout(self, behaviour, count, generator, provenance=Provenance.ON_POLICY):
        """
        Sample ``count`` trajectories from the forward policy.

        Parameters
        ----------
        behaviour : Policy or ExplorationPolicy
            The sampling policy. Stored ``log_fwd`` always refers to the
            underlying policy, never to the exploration mixture.
        count : int
            Batch size ``K``.
        generator : torch.Generator
            Source of randomness.

        Returns
        -------
        TrajectoryBatch
        """
        with torch.no_grad():
            x = self.sample_initial(count, generator)
            states, log_fwd, log_back = [x], [], []
            for n in range(self.n_steps):
                x_next, step_log_fwd = self.forward_step(behaviour, x, n, generator)
                log_back.append(self.log_backward(x, x_next, n))
                log_fwd.append(step_log_fwd)
                states.append(x_next)
                x = x_next
            return TrajectoryBatch(
                self.stack(states),
                torch.stack(log_fwd, dim=1),
                torch.stack(log_back, dim=1),
                self.log_p0(states[0]),
                self.log_reward(x),
                provenance,
            )

    def backward_trajectories(self, policy, terminal, generator, provenance):
        """
        Sample trajectories ending at ``terminal`` from the backward kernel.

        The interior states are drawn ancestrally from :math:`p_{back}`; the
        forward log-densities are filled in by scoring each transition under
        ``policy``.
        """
        policy, _ = unwrap_behaviour(policy)
        with torch.no_grad():
            x = terminal
            states, log_back = [x], []
            for n in reversed(range(self.n_steps)):
                x_prev = self.backward_step(x, n, generator)
                log_back.append(self.log_backward(x_prev, x, n))
                states.append(x_prev)
                x = x_prev
            states = self.stack(states[::-1])
            log_back = torch.stack(log_back[::-1], dim=1)
            return TrajectoryBatch(
                states,
                self.score_forward(policy, states),
                log_back,
                self.log_p0(states[:, 0]),
                self.log_reward(terminal),
                provenance,
            )
