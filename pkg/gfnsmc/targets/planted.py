import logging

import numpy as np
import torch

from gfnsmc.exceptions import InputError
from gfnsmc.targets.base import Target

logger = logging.getLogger(__name__)


class PlantedMixture(Target):
    """
    A known constant times a normalised isotropic Gaussian mixture.

    .. math ::
        R(x) = Z \\sum_i w_i \\, \\mathcal{N}(x; \\mu_i, s_i^2 I)

    The normalising constant ``Z`` is planted, which makes the target the
    reference case for unbiasedness checks of normalising-constant estimators.
    The default is :math:`R = 7 \\, \\mathcal{N}(0, 1)` in one dimension.

    Parameters
    ----------
    dim : int, optional, default=1
        Dimension of the state space.
    z : float, optional, default=7.0
        The planted normalising constant.
    means : array_like, optional
        ``(M, dim)`` component means, default a single component at the origin.
    scales : array_like, optional
        ``(M,)`` component standard deviations, default ones.
    weights : array_like, optional
        ``(M,)`` mixing weights, normalised internally; default equal weights.
    """

    name = "planted"

    def __init__(self, dim=1, z=7.0, means=None, scales=None, weights=None):
        super().__init__(dim)
        if z <= 0:
            raise InputError(f"The planted constant must be positive, got {z}.")
        means = np.zeros((1, self.dim)) if means is None else means
        means = np.asarray(means, dtype=np.float64).reshape(-1, self.dim)
        components = means.shape[0]
        scales = np.ones(components) if scales is None else scales
        weights = np.ones(components) if weights is None else weights
        scales = np.asarray(scales, dtype=np.float64).reshape(components)
        weights = np.asarray(weights, dtype=np.float64).reshape(components)
        if np.any(scales <= 0) or np.any(weights <= 0):
            raise InputError("Component scales and weights must be positive.")
        self._z = float(z)
        self._means = means
        self._scales = scales
        self._weights = weights / weights.sum()

    @property
    def exact_log_z(self):
        return float(np.log(self._z))

    @property
    def has_sampler(self):
        return True

    def log_r(self, x):
        x = self.check_states(x)
        means = torch.as_tensor(self._means)
        log_scales = torch.as_tensor(np.log(self._scales))
        diff = x.unsqueeze(-2) - means
        log_components = (
            -0.5 * (diff ** 2).sum(-1) * torch.exp(-2 * log_scales)
            - self.dim * log_scales
            - 0.5 * self.dim * np.log(2 * np.pi)
            + torch.as_tensor(np.log(self._weights))
        )
        return torch.logsumexp(log_components, dim=-1) + np.log(self._z)

    def exact_sample(self, rng, count):
        count = int(count)
        index = rng.choice(len(self._weights), size=count, p=self._weights)
        noise = rng.standard_normal((count, self.dim))
        return self._means[index] + self._scales[index, None] * noise

    def to_dict(self):
        return {
            "name": self.name,
            "dim": self.dim,
            "z": self._z,
            "means": self._means.tolist(),
            "scales": self._scales.tolist(),
            "weights": self._weights.tolist(),
        }
