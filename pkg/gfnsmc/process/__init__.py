"""
Forward policies, fixed backward kernels and learnt flows.
"""
import logging

from gfnsmc.exceptions import ConfigError
from gfnsmc.process.base import GenerativeProcess
from gfnsmc.process.diffusion import (
    DiffusionProcess,
    DiffusionSchedule,
    backward_kernel_logpdf,
    forward_policy_step,
)
from gfnsmc.process.flow import FlowModel, beta_schedule, flow_log_value
from gfnsmc.process.policy import ExplorationPolicy, Policy, unwrap_behaviour
from gfnsmc.process.sequence import (
    PrependAppendProcess,
    discrete_parents,
    prepend_append_step,
)
from gfnsmc.process.trajectory import Provenance, TrajectoryBatch

logger = logging.getLogger(__name__)


def make_process(config, target):
    """
    Build the generative process described by a :class:`~gfnsmc.config.TrainConfig`.

    For sequence targets the number of steps is the string length.
    """
    if config.process == "diffusion":
        schedule = DiffusionSchedule(
            config.n_steps, sigma=config.sigma, ou_rate=config.ou_rate
        )
        return DiffusionProcess(
            target, schedule, langevin=config.langevin, langevin_clip=config.langevin_clip
        )
    if config.process == "prepend_append":
        return PrependAppendProcess(target)
    raise ConfigError(f"Unknown process {config.process!r}.")


def make_policy(config, process, generator=None):
    """Build a freshly initialised :class:`Policy` for ``process``."""
    return Policy(
        process.feature_dim,
        process.policy_output_dim,
        hidden=config.hidden_policy,
        activation=config.activation,
        final_scale=config.final_scale,
        langevin=config.langevin and not process.is_discrete,
        generator=generator,
    )


def make_flow(config, process, generator=None):
    """Build a freshly initialised :class:`FlowModel` for ``process``."""
    return FlowModel(
        process,
        hidden=config.hidden_flow,
        activation=config.activation,
        final_scale=config.final_scale,
        learn_schedule=config.learn_schedule,
        learn_correction=config.learn_correction,
        generator=generator,
    )


def sample_backward_trajectory(process, policy, terminal, generator):
    """
    Sample backward trajectories from terminal states and score them under
    ``policy``; see :meth:`GenerativeProcess.backward_trajectories`.
    """
    return process.backward_trajectories(
        policy, terminal, generator, Provenance.TARGET
    )


__all__ = [
    "GenerativeProcess",
    "DiffusionProcess",
    "DiffusionSchedule",
    "PrependAppendProcess",
    "Policy",
    "ExplorationPolicy",
    "FlowModel",
    "TrajectoryBatch",
    "Provenance",
    "backward_kernel_logpdf",
    "forward_policy_step",
    "flow_log_value",
    "beta_schedule",
    "discrete_parents",
    "prepend_append_step",
    "sample_backward_trajectory",
    "unwrap_behaviour",
    "make_process",
    "make_policy",
    "make_flow",
]
