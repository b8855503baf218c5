import logging

import numpy as np
import torch
from scipy.integrate import quad

from gfnsmc.exceptions import InputError
from gfnsmc.targets.base import Target

logger = logging.getLogger(__name__)

#: Standard deviation of the Gaussian envelope for the quartic coordinate.
ENVELOPE_SCALE = 3.0


def double_well_energy(a, b):
    """Energy of one double-well pair, ``a^4 - 6 a^2 - a / 2 + b^2 / 2``."""
    return a ** 4 - 6 * a ** 2 - 0.5 * a + 0.5 * b ** 2


def _log_envelope_ratio(a):
    # log of exp(-E(a, 0)) / exp(-a^2 / (2 s^2)), up to constants
    return -(a ** 4 - 6 * a ** 2 - 0.5 * a) + a ** 2 / (2 * ENVELOPE_SCALE ** 2)


def _max_log_envelope_ratio():
    # stationary points: -4 a^3 + 2 (6 + 1 / (2 s^2)) a + 1/2 = 0
    coefficients = [-4.0, 0.0, 12.0 + 1.0 / ENVELOPE_SCALE ** 2, 0.5]
    roots = np.roots(coefficients)
    real = roots[np.abs(roots.imag) < 1e-10].real
    return float(np.max(_log_envelope_ratio(real)))


class ManyWell(Target):
    """
    Product of ``dim / 2`` independent two-dimensional double wells.

    .. math ::
        \\log R(x) = -\\sum_{i=1}^{d/2} E(x_{2i-1}, x_{2i})

    Each pair has :math:`2` wells along its first coordinate, so the target has
    :math:`2^{d/2}` modes. The normaliser factorises over pairs and over the two
    coordinates of a pair; the quartic factor is integrated numerically once.

    Exact samples draw the quadratic coordinate from :math:`\\mathcal{N}(0, 1)`
    and the quartic coordinate by rejection from :math:`\\mathcal{N}(0, 3^2)`,
    whose density ratio to the quartic factor has a closed-form maximum.
    """

    name = "manywell"

    def __init__(self, dim=32):
        if int(dim) % 2 != 0:
            raise InputError(f"ManyWell needs an even dimension, got {dim}.")
        super().__init__(dim)
        self._log_ratio_max = _max_log_envelope_ratio()
        self._exact_log_z = None

    @property
    def exact_log_z(self):
        if self._exact_log_z is None:
            z_quartic, _ = quad(
                lambda a: np.exp(-(a ** 4 - 6 * a ** 2 - 0.5 * a)), -np.inf, np.inf
            )
            pair = np.log(z_quartic) + 0.5 * np.log(2 * np.pi)
            self._exact_log_z = float(self.dim // 2 * pair)
        return self._exact_log_z

    @property
    def has_sampler(self):
        return True

    def log_r(self, x):
        x = self.check_states(x)
        return -double_well_energy(x[..., 0::2], x[..., 1::2]).sum(-1)

    def _sample_quartic(self, rng, count):
        accepted = np.empty(0)
        while accepted.size < count:
            proposal = ENVELOPE_SCALE * rng.standard_normal(2 * count)
            log_u = np.log(rng.uniform(size=2 * count))
            keep = log_u < _log_envelope_ratio(proposal) - self._log_ratio_max
            accepted = np.concatenate([accepted, proposal[keep]])
        return accepted[:count]

    def exact_sample(self, rng, count):
        count = int(count)
        pairs = self.dim // 2
        samples = np.empty((count, self.dim))
        samples[:, 0::2] = self._sample_quartic(rng, count * pairs).reshape(
            count, pairs
        )
        samples[:, 1::2] = rng.standard_normal((count, pairs))
        return samples


def manywell_log_density(x):
    """
    Log-density of ManyWell at a single state or a batch.

    The dimension is read from the trailing axis of ``x``.
    """
    x = torch.as_tensor(x, dtype=torch.float64)
    value = ManyWell(dim=x.shape[-1]).log_r(x)
    return float(value) if value.ndim == 0 else value
