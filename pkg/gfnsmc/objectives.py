"""
Training losses over batches of trajectories.

Per-trajectory losses return a ``(K,)`` tensor; :func:`weighted_batch_loss`
reduces them with normalised importance weights. Flows are passed as a
dictionary ``step -> (K,) log-flow`` built by :func:`flow_table`, where step 0
carries :math:`\\log Z_\\theta + \\log p_0(x_0)` and step ``N`` carries
:math:`\\log R(x_N)`.
"""
import logging

import numpy as np
import torch

from gfnsmc.autodiff import DTYPE
from gfnsmc.exceptions import ConfigError, ContractError

logger = logging.getLogger(__name__)


class LossReport(object):
    """
    A reduced loss together with the per-trajectory terms it came from.

    Parameters
    ----------
    value : torch.Tensor
        Scalar loss, differentiable.
    contributions : torch.Tensor
        ``(K,)`` weighted per-trajectory terms; they sum to ``value``.
    target : str
        Which parameters the loss trains: ``"policy"``, ``"flow"`` or ``"both"``.
    """

    TARGETS = ("policy", "flow", "both")

    def __init__(self, value, contributions, target):
        if target not in self.TARGETS:
            raise ContractError(f"Unknown gradient target {target!r}.")
        self.value = value
        self.contributions = contributions
        self.target = target

    def __float__(self):
        return float(self.value.detach())

    def __repr__(self):
        return f"LossReport(value={float(self):.6g}, target={self.target!r})"


def _clip(residual, log_ratio_clip):
    if log_ratio_clip is None:
        return residual
    return torch.clamp(residual, -log_ratio_clip, log_ratio_clip)


def tb_residual(batch, log_z, log_fwd=None):
    """
    Trajectory balance log-ratio,
    :math:`\\log Z_\\theta + \\log p_0 + \\sum \\log p_\\theta - \\log R - \\sum \\log p_{back}`.
    """
    log_fwd = batch.log_fwd if log_fwd is None else log_fwd
    return (
        (log_z + batch.log_p0)
        + log_fwd.sum(-1)
        - batch.log_r
        - batch.log_back.sum(-1)
    )


def tb_loss(batch, policy, log_fwd=None, process=None, log_ratio_clip=None):
    """
    Per-trajectory trajectory balance loss.

    Parameters
    ----------
    batch : TrajectoryBatch
    policy : Policy
        Provides :math:`\\log Z_\\theta`.
    log_fwd : torch.Tensor, optional
        ``(K, N)`` forward log-densities carrying gradients. If omitted and
        ``process`` is given, the batch is rescored under ``policy``; otherwise
        the stored (detached) values are used.
    process : GenerativeProcess, optional
    log_ratio_clip : float, optional
        Clamp the log-ratio to ``[-clip, clip]`` before squaring.

    Returns
    -------
    torch.Tensor
        ``(K,)`` squared log-ratios.
    """
    if log_fwd is None and process is not None:
        log_fwd = process.score_forward(policy, batch.states)
    residual = tb_residual(batch, policy.log_z, log_fwd)
    return _clip(residual, log_ratio_clip) ** 2


def flow_table(flow, process, batch, steps, log_z):
    """
    Log-flows of the batch at ``steps`` with :math:`F_0 = Z_\\theta p_0`.

    Parameters
    ----------
    flow : FlowModel
    process : GenerativeProcess
    batch : TrajectoryBatch
    steps : iterable of int
    log_z : torch.Tensor
        :math:`\\log Z_\\theta`; pass it detached when only the flows train.

    Returns
    -------
    dict
        ``step -> (K,) tensor``.
    """
    table = {}
    for n in steps:
        if n == 0:
            table[0] = log_z + batch.log_p0
        elif n == batch.n_steps:
            table[n] = batch.log_r
        else:
            table[n] = flow.log_value(process, batch.step_states(n), n)
    return table


def subtb_residual(log_flows, log_fwd, log_back, m, n):
    """
    :math:`\\log F_m + \\sum_{i=m}^{n-1} \\log p_\\theta - \\log F_n - \\sum_{i=m}^{n-1} \\log p_{back}`.
    """
    if not 0 <= m < n <= log_fwd.shape[1]:
        raise ContractError(f"Invalid segment [{m}, {n}] for N = {log_fwd.shape[1]}.")
    return (
        log_flows[m]
        + log_fwd[:, m:n].sum(-1)
        - log_flows[n]
        - log_back[:, m:n].sum(-1)
    )


def subtb_loss(log_flows, log_fwd, log_back, m, n, log_ratio_clip=None):
    """
    Per-trajectory subtrajectory balance loss on the segment ``[m, n]``.

    Returns
    -------
    torch.Tensor
        ``(K,)`` squared segment log-ratios.
    """
    return _clip(subtb_residual(log_flows, log_fwd, log_back, m, n), log_ratio_clip) ** 2


def subtb_lambda_loss(log_flows, log_fwd, log_back, lam):
    """
    :math:`\\lambda`-weighted average of all subtrajectory losses.

    .. math ::
        \\frac{\\sum_{m<n} \\lambda^{n-m} \\mathcal{L}_{m:n}}{\\sum_{m<n} \\lambda^{n-m}}

    Parameters
    ----------
    log_flows : dict
        Log-flows at every step ``0..N``.
    lam : float
        Positive decay; small values favour short segments.

    Returns
    -------
    torch.Tensor
        ``(K,)`` per-trajectory losses.
    """
    if lam <= 0:
        raise ConfigError(f"lambda must be positive, got {lam}.")
    n_steps = log_fwd.shape[1]
    count = log_fwd.shape[0]
    zero = torch.zeros((count, 1), dtype=DTYPE)
    cum_fwd = torch.cat([zero, torch.cumsum(log_fwd, dim=1)], dim=1)
    cum_back = torch.cat([zero, torch.cumsum(log_back, dim=1)], dim=1)
    flows = torch.stack([log_flows[j] for j in range(n_steps + 1)], dim=1)
    # residual(m, n) = h_m - h_n
    h = flows - cum_fwd + cum_back
    residual = h.unsqueeze(2) - h.unsqueeze(1)
    index = np.arange(n_steps + 1)
    length = index[None, :] - index[:, None]
    weights = np.where(length > 0, float(lam) ** np.maximum(length, 0), 0.0)
    weights = torch.as_tensor(weights / weights.sum(), dtype=DTYPE)
    return (weights * residual ** 2).sum(dim=(1, 2))


def subtb_chunk_loss(log_flows, log_fwd, log_back, chunk, log_ratio_clip=None):
    """
    Chunked subtrajectory balance.

    .. math ::
        \\sum_{i=0}^{N/L-1} \\Big[\\mathcal{L}_{iL:(i+1)L}
        + \\frac{\\mathcal{L}_{iL:N}}{N/L - i}\\Big]

    Only the flows at multiples of ``chunk`` are needed.

    Returns
    -------
    torch.Tensor
        ``(K,)`` per-trajectory losses.
    """
    n_steps = log_fwd.shape[1]
    if chunk < 1 or n_steps % chunk != 0:
        raise ConfigError(f"N = {n_steps} is not divisible by L = {chunk}.")
    n_chunks = n_steps // chunk
    total = torch.zeros(log_fwd.shape[0], dtype=DTYPE)
    for i in range(n_chunks):
        start = i * chunk
        total = total + subtb_loss(
            log_flows, log_fwd, log_back, start, start + chunk, log_ratio_clip
        )
        total = total + subtb_loss(
            log_flows, log_fwd, log_back, start, n_steps, log_ratio_clip
        ) / (n_chunks - i)
    return total


def lv_loss(log_weights):
    """
    Log-variance loss: sample variance (divisor ``K - 1``) of the log-weights.

    Returns
    -------
    LossReport
        Contributions are the centred squares divided by ``K - 1``.
    """
    count = log_weights.shape[0]
    if count < 2:
        raise ContractError("The log-variance loss needs at least two trajectories.")
    contributions = (log_weights - log_weights.mean()) ** 2 / (count - 1)
    return LossReport(contributions.sum(), contributions, "policy")


def weighted_batch_loss(losses, weights, target="policy"):
    """
    Reduce per-trajectory losses with normalised weights.

    Parameters
    ----------
    losses : torch.Tensor
        ``(K,)`` per-trajectory losses.
    weights : torch.Tensor or None
        ``(K,)`` non-negative weights summing to one; ``None`` means uniform.
    target : str, optional, default="policy"

    Returns
    -------
    LossReport
    """
    count = losses.shape[0]
    if weights is None:
        weights = torch.full((count,), 1.0 / count, dtype=DTYPE)
    weights = torch.as_tensor(weights, dtype=DTYPE).detach()
    if weights.shape != losses.shape:
        raise ContractError(
            f"Weights of shape {tuple(weights.shape)} for {count} losses."
        )
    if torch.any(weights < 0):
        raise ContractError("Importance weights must be non-negative.")
    if abs(float(weights.sum()) - 1.0) > 1e-6:
        raise ContractError(f"Importance weights sum to {float(weights.sum())}, not 1.")
    contributions = weights * losses
    return LossReport(contributions.sum(), contributions, target)
