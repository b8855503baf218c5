import logging

import numpy as np
import torch
from scipy.special import logsumexp

from gfnsmc.autodiff import DTYPE
from gfnsmc.buffer import SegmentRecord, batch_z_smc
from gfnsmc.exceptions import ConfigError, DegenerateWeightsError
from gfnsmc.process.trajectory import Provenance
from gfnsmc.utils import normalise_log_weights

logger = logging.getLogger(__name__)

#: Iteration cap of the tempering binary search.
MAX_BISECTIONS = 40

#: Absolute tolerance of the tempering binary search.
LAMBDA_TOLERANCE = 1e-6

RESAMPLING_SCHEMES = ("multinomial", "systematic")


def _as_numpy(log_w):
    if isinstance(log_w, torch.Tensor):
        return log_w.detach().cpu().numpy().astype(np.float64)
    return np.asarray(log_w, dtype=np.float64)


def temper(log_w, lam):
    """:math:`\\lambda \\log w` with ``-inf`` entries kept at ``-inf`` (also for ``lam = 0``)."""
    log_w = _as_numpy(log_w)
    return np.where(np.isneginf(log_w), -np.inf, lam * log_w)


def ess(log_w):
    """
    Effective sample size :math:`(\\sum w)^2 / \\sum w^2` from log-weights.

    Particles with weight zero (``-inf``) drop out of both sums.

    Parameters
    ----------
    log_w : array_like or torch.Tensor
        ``(K,)`` unnormalised log-weights.

    Returns
    -------
    float
        A value in ``[1, K]``.
    """
    log_w = _as_numpy(log_w)
    if log_w.size == 0 or np.all(np.isneginf(log_w)):
        raise DegenerateWeightsError("Every importance weight is zero.")
    if np.any(np.isnan(log_w)) or np.any(np.isposinf(log_w)):
        raise DegenerateWeightsError("Importance log-weights contain NaN or +inf.")
    value = np.exp(2 * logsumexp(log_w) - logsumexp(2 * log_w))
    return float(np.clip(value, 1.0, log_w.size))


def adaptive_iw_tempering(log_w, gamma, threshold=None):
    """
    Largest :math:`\\lambda \\in [0, 1]` keeping the tempered ESS above a threshold.

    Parameters
    ----------
    log_w : array_like or torch.Tensor
        ``(K,)`` log-weights.
    gamma : float
        Target ESS fraction in ``[0, 1]``.
    threshold : float, optional
        Absolute ESS threshold; defaults to ``gamma * K``.

    Returns
    -------
    float
        :math:`\\lambda^*`; 1 when the untempered weights already pass, otherwise
        the bisection's feasible end point (within ``1e-6`` of the boundary).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}.")
    log_w = _as_numpy(log_w)
    threshold = gamma * log_w.size if threshold is None else threshold
    if ess(log_w) >= threshold:
        return 1.0
    lower, upper = 0.0, 1.0
    if ess(temper(log_w, lower)) < threshold:
        logger.warning(
            "Too few particles with non-zero weight to reach the ESS threshold; "
            "using lambda = 0."
        )
        return lower
    for _ in range(MAX_BISECTIONS):
        if upper - lower < LAMBDA_TOLERANCE:
            break
        middle = 0.5 * (lower + upper)
        if ess(temper(log_w, middle)) >= threshold:
            lower = middle
        else:
            upper = middle
    return lower


def resample_indices(log_w, count, generator, scheme="multinomial"):
    """
    Ancestor indices drawn in proportion to ``exp(log_w)``.

    Parameters
    ----------
    log_w : array_like or torch.Tensor
        Unnormalised log-probabilities.
    count : int
        Number of draws.
    generator : torch.Generator
    scheme : str, optional, default="multinomial"
        ``"multinomial"`` or ``"systematic"``.

    Returns
    -------
    torch.Tensor
        ``(count,)`` int64 indices.
    """
    probabilities = torch.as_tensor(np.exp(normalise_log_weights(_as_numpy(log_w))))
    if scheme == "multinomial":
        return torch.multinomial(probabilities, count, replacement=True, generator=generator)
    if scheme == "systematic":
        offset = torch.rand(1, generator=generator, dtype=DTYPE)
        positions = (offset + torch.arange(count, dtype=DTYPE)) / count
        cumulative = torch.cumsum(probabilities, dim=0)
        cumulative[-1] = 1.0
        index = torch.searchsorted(cumulative, positions, right=True)
        return torch.clamp(index, max=len(probabilities) - 1)
    raise ConfigError(f"Unknown resampling scheme {scheme!r}.")


def tempered_resample(process, particles, log_w, gamma, generator, scheme="multinomial"):
    """
    Resample with adaptive tempering.

    Ancestors are drawn in proportion to :math:`w^{\\lambda^*}` and each
    offspring keeps the residual weight :math:`w_{a(k)}^{1 - \\lambda^*}`.

    Returns
    -------
    tuple
        ``(particles, residual normalised log-weights, lambda, ancestor indices)``.
    """
    log_w = _as_numpy(log_w)
    lam = adaptive_iw_tempering(log_w, gamma)
    index = resample_indices(temper(log_w, lam), len(log_w), generator, scheme)
    chosen = log_w[index.numpy()]
    residual = normalise_log_weights((1.0 - lam) * chosen)
    return (
        process.take(particles, index),
        torch.as_tensor(residual, dtype=DTYPE),
        lam,
        index,
    )


def smc_weight_update(log_flow_next, log_back, log_flow_prev, log_fwd):
    """
    Incremental log-weight
    :math:`\\log F_{n+1}(x_{n+1}) + \\log p_{back} - \\log F_n(x_n) - \\log p_\\theta`.

    Summed backward and forward terms give the increment of a whole segment.
    """
    return log_flow_next + log_back - log_flow_prev - log_fwd


class ParticleSystem(object):
    """
    State and history of one SMC run.

    After :func:`smc_sampling` returns, ``particles`` are the terminal states,
    ``log_w`` their self-normalised log-weights and ``log_z_hat`` the running
    estimate of :math:`\\log Z`.
    """

    def __init__(self, particles, log_w):
        self.particles = particles
        self.log_w = log_w
        self.step = 0
        self.log_z_hat = 0.0
        self.resample_steps = []
        self.lambdas = []
        self.ess_history = []
        self.records = []
        self.flagged = 0

    @property
    def batch_size(self) -> int:
        """int: Number of particles ``K``."""
        return self.log_w.shape[0]

    @property
    def log_weights(self):
        """
        torch.Tensor: Combined log-weights :math:`\\log(K \\hat Z w_N^k)` of the
        terminal particles, on the same scale as annealed importance weights.
        """
        return np.log(self.batch_size) + self.log_z_hat + self.log_w

    @property
    def mean_lambda(self) -> float:
        """float: Mean tempering exponent over resampling events (1 if none)."""
        return float(np.mean(self.lambdas)) if self.lambdas else 1.0


def smc_sampling(
    process,
    policy,
    flow,
    count,
    chunk,
    kappa,
    gamma,
    generator,
    scheme="multinomial",
):
    """
    Sequential Monte Carlo with the policy as proposal and the flows as
    intermediate targets.

    Particles move ``chunk`` steps at a time. After each segment the weights
    are multiplied by the segment increment, the normalising-constant estimate
    is updated, and the particles are resampled with adaptive tempering when
    their ESS falls below ``kappa * count`` (never after the last segment).

    Parameters
    ----------
    process : GenerativeProcess
    policy : Policy or ExplorationPolicy
    flow : FlowModel
    count : int
        Number of particles ``K``.
    chunk : int
        Segment length ``L``; must divide ``N``.
    kappa : float
        Resampling threshold as a fraction of ``K``.
    gamma : float
        Tempering ESS fraction.
    generator : torch.Generator
    scheme : str, optional, default="multinomial"

    Returns
    -------
    ParticleSystem
        Terminal particles and weights; see :attr:`ParticleSystem.log_weights`.
    """
    n_steps = process.n_steps
    if chunk < 1 or n_steps % chunk != 0:
        raise ConfigError(f"N = {n_steps} is not divisible by L = {chunk}.")
    if not 0.0 <= kappa <= 1.0:
        raise ConfigError(f"kappa must lie in [0, 1], got {kappa}.")
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}.")
    n_segments = n_steps // chunk

    with torch.no_grad():
        x = process.sample_initial(count, generator)
        system = ParticleSystem(x, torch.full((count,), -np.log(count), dtype=DTYPE))
        log_flow_prev = flow.log_value(process, x, 0)
        for j in range(n_segments):
            start = j * chunk
            log_start = normalise_log_weights(system.log_w)
            log_back = torch.zeros(count, dtype=DTYPE)
            log_fwd = torch.zeros(count, dtype=DTYPE)
            for n in range(start, start + chunk):
                x_next, step_log_fwd = process.forward_step(policy, x, n, generator)
                log_back = log_back + process.log_backward(x, x_next, n)
                log_fwd = log_fwd + step_log_fwd
                x = x_next
            log_flow_next = flow.log_value(process, x, start + chunk)
            increment = smc_weight_update(log_flow_next, log_back, log_flow_prev, log_fwd)
            bad = ~torch.isfinite(increment) & ~torch.isneginf(increment)
            bad = bad | ~torch.isfinite(log_flow_next) & ~torch.isneginf(log_flow_next)
            if torch.any(bad):
                logger.warning(
                    f"{int(bad.sum())} particles have non-finite flows at step "
                    f"{start + chunk}; their weights are set to zero."
                )
                system.flagged += int(bad.sum())
                increment = torch.where(bad, torch.full_like(increment, -np.inf), increment)
            system.records.append(SegmentRecord(log_start.clone(), increment.clone()))
            log_w = log_start + increment
            segment_ess = ess(log_w)
            system.ess_history.append(segment_ess)
            system.step = start + chunk
            if segment_ess < kappa * count and j < n_segments - 1:
                x, log_w, lam, index = tempered_resample(
                    process, x, log_w, gamma, generator, scheme
                )
                log_flow_prev = log_flow_next[index]
                system.resample_steps.append(system.step)
                system.lambdas.append(lam)
                if count > 1 and torch.unique(index).numel() == 1:
                    logger.warning(
                        f"Resampling at step {system.step} kept a single ancestor."
                    )
                logger.debug(
                    f"Resampled at step {system.step} (ESS {segment_ess:.1f}, "
                    f"lambda {lam:.4f})"
                )
            else:
                log_w = normalise_log_weights(log_w)
                log_flow_prev = log_flow_next
            system.log_w = log_w
        system.particles = x
        system.log_z_hat = batch_z_smc(system.records)
    return system


def ais_sampling(process, policy, count, generator):
    """
    Annealed importance sampling with the policy as proposal.

    Returns
    -------
    tuple
        ``(TrajectoryBatch, log-weights)`` where the log-weights are
        :math:`\\log R + \\sum \\log p_{back} - \\log p_0 - \\sum \\log p_\\theta`.
    """
    batch = process.rollout(policy, count, generator, Provenance.ON_POLICY)
    return batch, batch.log_weights
