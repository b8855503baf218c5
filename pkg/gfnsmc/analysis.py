"""
Evaluation of trained samplers.

All metrics use the amortised sampler alone: forward rollouts of the policy
and backward trajectories from exact target samples. Nothing here runs SMC.
"""
import logging

import numpy as np
import torch
from scipy.spatial.distance import cdist
from scipy.special import logsumexp
from scipy.stats import pearsonr

from gfnsmc.exceptions import CapabilityError, ConfigError, ContractError, InputError
from gfnsmc.process.trajectory import Provenance
from gfnsmc.utils import RandomStreams, logmeanexp

logger = logging.getLogger(__name__)

#: Evaluations averaged by :func:`moving_average` at the end of training.
MOVING_AVERAGE_WINDOW = 5

SINKHORN_TOLERANCE = 1e-6
SINKHORN_MAX_ITERATIONS = 1000

METRICS = ("elbo", "eubo", "log_z", "sinkhorn", "mmd", "modes", "l1")


def forward_log_weights(process, policy, count, generator):
    """Annealed importance log-weights of ``count`` forward trajectories."""
    batch = process.rollout(policy, count, generator, Provenance.ON_POLICY)
    return batch.log_weights.numpy(), batch.terminal


def backward_log_weights(process, policy, terminal, generator):
    """Log-weights of backward trajectories from the given terminal states."""
    batch = process.backward_trajectories(policy, terminal, generator, Provenance.TARGET)
    return batch.log_weights.detach().numpy()


def elbo(process, policy, count, generator):
    """
    Evidence lower bound: mean log-weight of ``count`` forward trajectories.

    Returns
    -------
    float
    """
    log_w, _ = forward_log_weights(process, policy, count, generator)
    return float(np.mean(log_w))


def eubo(process, policy, count, generator, rng):
    """
    Evidence upper bound: mean log-weight of backward trajectories started
    from exact target samples.

    Parameters
    ----------
    process : GenerativeProcess
    policy : Policy
    count : int
    generator : torch.Generator
        Drives the backward kernel.
    rng : numpy.random.Generator
        Drives the exact target sampler.

    Raises
    ------
    CapabilityError
        If the target has no exact sampler.
    """
    target = process.target
    if not target.has_sampler:
        raise CapabilityError(f"{target.name} has no exact sampler; the EUBO is unavailable.")
    terminal = process.from_numpy(target.exact_sample(rng, count))
    return float(np.mean(backward_log_weights(process, policy, terminal, generator)))


def estimate_log_marginal(process, policy, x, generator):
    """
    One-sample estimate of :math:`\\log p_\\theta(x)` per terminal state.

    A single backward trajectory :math:`\\tau` is drawn for each state and
    :math:`\\log p_\\theta(\\tau) - \\log p_{back}(\\tau \\mid x)` is returned;
    its exponential is unbiased for the marginal.

    Returns
    -------
    numpy.ndarray
        ``(K,)`` estimates.
    """
    batch = process.backward_trajectories(policy, x, generator, Provenance.TARGET)
    estimate = batch.log_p0 + batch.log_fwd.sum(-1) - batch.log_back.sum(-1)
    return estimate.detach().numpy()


def pearson_r(log_marginals, log_rewards):
    """
    Sample Pearson correlation of estimated log-marginals with log-rewards.

    Raises
    ------
    ContractError
        With fewer than two points or zero variance in either input.
    """
    x = np.asarray(log_marginals, dtype=np.float64)
    y = np.asarray(log_rewards, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ContractError("Pearson correlation needs two equal-length series of two or more points.")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ContractError("Pearson correlation is undefined for a constant series.")
    return float(pearsonr(x, y)[0])


def sinkhorn(X, Y, reg=1.0, tolerance=SINKHORN_TOLERANCE, max_iterations=SINKHORN_MAX_ITERATIONS):
    """
    Entropic optimal transport between two uniform empirical measures.

    The dual potentials are updated in log space on the squared-Euclidean cost.

    Returns
    -------
    tuple
        ``(cost, converged)`` with cost :math:`\\langle P, C \\rangle +
        \\varepsilon \\, \\mathrm{KL}(P \\| a b^T)`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise InputError(f"Dimension mismatch: {X.shape[1]} vs {Y.shape[1]}.")
    if reg <= 0:
        raise ConfigError(f"The regularisation must be positive, got {reg}.")
    cost = cdist(X, Y, "sqeuclidean")
    log_a = np.full(len(X), -np.log(len(X)))
    log_b = np.full(len(Y), -np.log(len(Y)))
    f = np.zeros(len(X))
    g = np.zeros(len(Y))
    converged = False
    for _ in range(max_iterations):
        f = reg * (log_a - logsumexp((g[None, :] - cost) / reg, axis=1))
        g = reg * (log_b - logsumexp((f[:, None] - cost) / reg, axis=0))
        log_plan = (f[:, None] + g[None, :] - cost) / reg
        error = np.abs(np.exp(logsumexp(log_plan, axis=1)) - np.exp(log_a)).sum()
        if error < tolerance:
            converged = True
            break
    plan = np.exp(log_plan)
    kl = np.sum(plan * (log_plan - log_a[:, None] - log_b[None, :]))
    return float(np.sum(plan * cost) + reg * kl), converged


def sinkhorn_distance(X, Y, reg=1.0):
    """
    Entropic transport cost between two sample sets (regularisation 1 by default).

    Non-convergence within 1000 iterations is logged and the last iterate is returned.
    """
    value, converged = sinkhorn(X, Y, reg)
    if not converged:
        logger.warning(
            f"Sinkhorn did not reach a marginal error of {SINKHORN_TOLERANCE} "
            f"in {SINKHORN_MAX_ITERATIONS} iterations."
        )
    return value


def median_bandwidth(X, Y):
    """Median pairwise Euclidean distance of the pooled samples."""
    pooled = np.concatenate([X, Y])
    distances = cdist(pooled, pooled)
    upper = distances[np.triu_indices(len(pooled), k=1)]
    if upper.size == 0 or np.median(upper) == 0:
        return 1.0
    return float(np.median(upper))


def mmd(X, Y, bandwidth=None):
    """
    Maximum mean discrepancy with the exponential kernel
    :math:`k(a, b) = \\exp(-\\|a - b\\| / \\ell)`.

    Parameters
    ----------
    X, Y : array_like
        ``(n, d)`` and ``(m, d)`` samples.
    bandwidth : float, optional
        :math:`\\ell`; the median pairwise distance of the pooled samples by default.

    Returns
    -------
    float
        The square root of the biased V-statistic estimate of MMD² with this
        kernel (negative round-off clipped at zero), so it is a distance on the
        scale of the kernel, not the squared discrepancy.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise InputError(f"Dimension mismatch: {X.shape[1]} vs {Y.shape[1]}.")
    bandwidth = median_bandwidth(X, Y) if bandwidth is None else bandwidth
    k_xx = np.exp(-cdist(X, X) / bandwidth).mean()
    k_yy = np.exp(-cdist(Y, Y) / bandwidth).mean()
    k_xy = np.exp(-cdist(X, Y) / bandwidth).mean()
    return float(np.sqrt(max(k_xx + k_yy - 2 * k_xy, 0.0)))


def mode_coverage(samples, means, radius=3.0):
    """Number of ``means`` with at least one sample within ``radius``."""
    samples = np.asarray(samples, dtype=np.float64)
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    if samples.size == 0:
        return 0
    samples = samples.reshape(-1, means.shape[1])
    return int(np.sum(np.any(cdist(means, samples) <= radius, axis=1)))


def moving_average(values, window=MOVING_AVERAGE_WINDOW):
    """
    Trailing moving average; the first ``window - 1`` entries average over
    the values seen so far.
    """
    values = np.asarray(values, dtype=np.float64)
    cumulative = np.concatenate([[0.0], np.cumsum(values)])
    index = np.arange(1, len(values) + 1)
    start = np.maximum(index - window, 0)
    return (cumulative[index] - cumulative[start]) / (index - start)


class EvalReport(object):
    """
    Results of one evaluation.

    Attributes are ``None`` for metrics that were not requested.
    """

    FIELDS = (
        "elbo",
        "eubo",
        "log_z_hat",
        "log_z_theta",
        "sinkhorn",
        "mmd",
        "mmd_bandwidth",
        "mode_count",
        "l1",
        "pearson_r",
        "sample_count",
        "seed",
    )

    def __init__(self, sample_count, seed):
        for field in self.FIELDS:
            setattr(self, field, None)
        self.sample_count = int(sample_count)
        self.seed = int(seed)

    def to_dict(self):
        return {field: getattr(self, field) for field in self.FIELDS}

    def __repr__(self):
        values = ", ".join(
            f"{field}={value:.4g}" if isinstance(value, float) else f"{field}={value}"
            for field, value in self.to_dict().items()
            if value is not None
        )
        return f"EvalReport({values})"


def evaluate(process, policy, metrics, count, seed, epoch=0):
    """
    Evaluate ``policy`` on the requested ``metrics``.

    Parameters
    ----------
    process : GenerativeProcess
    policy : Policy
    metrics : list of str
        Any of :data:`METRICS`.
    count : int
        Number of evaluation samples.
    seed : int
    epoch : int, optional
        Mixed into the random streams so periodic evaluations differ.

    Returns
    -------
    EvalReport
    """
    unknown = sorted(set(metrics) - set(METRICS))
    if unknown:
        raise ConfigError(f"Unknown metrics {unknown}; choose from {list(METRICS)}.")
    streams = RandomStreams(seed, epoch)
    target = process.target
    report = EvalReport(count, seed)
    report.log_z_theta = float(policy.log_z.detach())

    with torch.no_grad():
        log_w, terminal = forward_log_weights(
            process, policy, count, streams.torch("eval.forward")
        )
    report.elbo = float(np.mean(log_w))
    report.log_z_hat = logmeanexp(log_w)

    if "eubo" in metrics:
        report.eubo = eubo(
            process,
            policy,
            count,
            streams.torch("eval.backward"),
            streams.numpy("eval.exact"),
        )

    needs_reference = {"sinkhorn", "mmd"} & set(metrics)
    if needs_reference:
        if target.is_discrete:
            raise CapabilityError("Sample distances are defined for continuous targets only.")
        if not target.has_sampler:
            raise CapabilityError(f"{target.name} has no exact sampler.")
        samples = process.to_numpy(terminal)
        reference = target.exact_sample(streams.numpy("eval.reference"), count)
        if "sinkhorn" in metrics:
            report.sinkhorn = sinkhorn_distance(samples, reference)
        if "mmd" in metrics:
            report.mmd_bandwidth = median_bandwidth(samples, reference)
            report.mmd = mmd(samples, reference, report.mmd_bandwidth)

    if "modes" in metrics:
        if not hasattr(target, "means"):
            raise CapabilityError(f"{target.name} has no known modes.")
        report.mode_count = mode_coverage(process.to_numpy(terminal), target.means)

    if "l1" in metrics:
        from gfnsmc.enumeration import enumerate_table, exact_policy_marginal, l1_distance

        table = enumerate_table(target)
        report.l1 = l1_distance(exact_policy_marginal(table, policy, process), table)
        if np.ptp(table.log_r) > 0:
            log_marginal = estimate_log_marginal(
                process,
                policy,
                process.from_numpy(target.terminals()[0]),
                streams.torch("eval.marginal"),
            )
            report.pearson_r = pearson_r(log_marginal, table.log_r)

    logger.info(f"Evaluation: {report}")
    return report
