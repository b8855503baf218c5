import logging

import numpy as np
import torch

from gfnsmc.targets.base import Target, gaussian_log_pdf

logger = logging.getLogger(__name__)

#: Lower bound on the log-variance of the funnel's neck coordinates.
LOG_VARIANCE_FLOOR = -60.0


class Funnel(Target):
    """
    Neal's funnel.

    .. math ::
        x_1 \\sim \\mathcal{N}(0, 9), \\quad
        x_i \\mid x_1 \\sim \\mathcal{N}(0, e^{x_1}), \\quad i = 2, \\ldots, d

    The density is normalised. For very negative :math:`x_1` the conditional
    variance underflows, so its log is clamped at :data:`LOG_VARIANCE_FLOOR`.
    """

    name = "funnel"

    def __init__(self, dim=10):
        super().__init__(dim)

    @property
    def exact_log_z(self):
        return 0.0

    @property
    def has_sampler(self):
        return True

    def log_r(self, x):
        x = self.check_states(x)
        head = x[..., 0]
        log_var = torch.clamp(head, min=LOG_VARIANCE_FLOOR)
        log_head = gaussian_log_pdf(head, 0.0, np.log(9.0))
        log_tail = gaussian_log_pdf(x[..., 1:], 0.0, log_var.unsqueeze(-1)).sum(-1)
        return log_head + log_tail

    def exact_sample(self, rng, count):
        head = 3.0 * rng.standard_normal(int(count))
        scale = np.exp(0.5 * np.maximum(head, LOG_VARIANCE_FLOOR))
        tail = scale[:, None] * rng.standard_normal((int(count), self.dim - 1))
        return np.column_stack([head, tail])


def funnel_log_density(x):
    """Log-density of the 10-dimensional funnel at a single state or a batch."""
    value = Funnel(dim=10).log_r(x)
    return float(value) if value.ndim == 0 else value
