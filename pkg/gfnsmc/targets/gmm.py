import logging

import numpy as np
import torch

from gfnsmc.exceptions import InputError
from gfnsmc.targets.base import Target

logger = logging.getLogger(__name__)


class GaussianMixture(Target):
    """
    Equal-weight mixture of unit-covariance Gaussians.

    .. math ::
        R(x) = \\frac{1}{M} \\sum_{i=1}^{M} \\mathcal{N}(x; \\nu_i, I)

    The mixture is normalised, so :attr:`exact_log_z` is zero. Unless given
    explicitly, the means are drawn uniformly on ``[-box, box]^d`` from a
    generator seeded with ``seed`` so that the mode layout is reproducible.

    Parameters
    ----------
    dim : int, optional, default=2
        Dimension of the state space.
    components : int, optional, default=40
        Number of mixture components ``M``.
    seed : int, optional, default=0
        Seed of the mean layout.
    box : float, optional, default=40.0
        Half-width of the box the means are drawn from.
    means : array_like, optional
        Explicit ``(M, dim)`` means; overrides ``components``, ``seed`` and ``box``.
    """

    name = "gmm40"

    def __init__(self, dim=2, components=40, seed=0, box=40.0, means=None):
        super().__init__(dim)
        self._explicit = means is not None
        if means is None:
            rng = np.random.default_rng(int(seed))
            means = rng.uniform(-box, box, size=(int(components), self.dim))
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        if means.shape[1] != self.dim:
            raise InputError(
                f"Mixture means have dimension {means.shape[1]}, expected {self.dim}."
            )
        self._seed = int(seed)
        self._box = float(box)
        self._means = means
        self._means_t = torch.as_tensor(means, dtype=torch.float64)

    @property
    def means(self):
        """numpy.ndarray: Component means, shape ``(M, dim)``."""
        return self._means

    @property
    def components(self) -> int:
        """int: Number of mixture components."""
        return self._means.shape[0]

    @property
    def exact_log_z(self):
        return 0.0

    @property
    def has_sampler(self):
        return True

    def log_r(self, x):
        x = self.check_states(x)
        diff = x.unsqueeze(-2) - self._means_t
        log_components = -0.5 * (diff ** 2).sum(-1) - 0.5 * self.dim * np.log(
            2 * np.pi
        )
        return torch.logsumexp(log_components, dim=-1) - np.log(self.components)

    def exact_sample(self, rng, count):
        index = rng.integers(self.components, size=int(count))
        return self._means[index] + rng.standard_normal((int(count), self.dim))

    def to_dict(self):
        options = {"name": self.name, "dim": self.dim}
        if self._explicit:
            options["means"] = self._means.tolist()
        else:
            options.update(
                {"components": self.components, "seed": self._seed, "box": self._box}
            )
        return options


def gmm_log_density(mixture, x):
    """
    Log-density of a :class:`GaussianMixture` at ``x``.

    Parameters
    ----------
    mixture : GaussianMixture
        The mixture.
    x : array_like
        A single state of dimension ``mixture.dim`` or a batch ``(..., dim)``.

    Returns
    -------
    float or torch.Tensor
        A float for a single state, otherwise a tensor of log-densities.
    """
    value = mixture.log_r(x)
    return float(value) if value.ndim == 0 else value
