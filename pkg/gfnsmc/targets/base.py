import logging

import numpy as np
import torch

from gfnsmc.exceptions import CapabilityError, InputError

logger = logging.getLogger(__name__)


class Target(object):
    """
    Base class for an unnormalised target density :math:`R(x)`.

    Subclasses implement :meth:`log_r` on ``torch.float64`` tensors of shape
    ``(..., dim)``. The gradient is obtained from autograd, so every continuous
    target gets an exact :meth:`grad_log_r` for free. Exact samplers and exact
    log-normalisers are optional and advertised through :attr:`has_sampler` and
    :attr:`exact_log_z`.
    """

    #: str: Name used to select the target in a configuration file.
    name = None

    def __init__(self, dim):
        if int(dim) < 1:
            raise InputError(f"Target dimension must be positive, got {dim}.")
        self._dim = int(dim)

    @property
    def dim(self) -> int:
        """int: Dimension ``d`` of the state space."""
        return self._dim

    @property
    def exact_log_z(self):
        """float or None: Exact log normalising constant, if known."""
        return None

    @property
    def has_gradient(self) -> bool:
        """bool: Whether :meth:`grad_log_r` is available."""
        return True

    @property
    def has_sampler(self) -> bool:
        """bool: Whether :meth:`exact_sample` is available."""
        return False

    @property
    def is_discrete(self) -> bool:
        """bool: Whether states are token sequences instead of real vectors."""
        return False

    def check_states(self, x):
        """
        Convert ``x`` to a float64 tensor and check its trailing dimension.

        Raises
        ------
        InputError
            If the trailing dimension is not :attr:`dim`.
        """
        x = torch.as_tensor(x, dtype=torch.float64)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise InputError(
                f"{self.name} expects states of dimension {self.dim}, "
                f"got shape {tuple(x.shape)}."
            )
        return x

    def log_r(self, x):
        """
        Unnormalised log-density.

        Parameters
        ----------
        x : torch.Tensor
            States of shape ``(..., dim)``.

        Returns
        -------
        torch.Tensor
            Log-density of shape ``(...)``.
        """
        raise NotImplementedError()

    def grad_log_r(self, x):
        """
        Gradient of :meth:`log_r` with respect to the state.

        The result is detached from any graph the caller may be building.
        """
        if not self.has_gradient:
            raise CapabilityError(f"Target {self.name} has no gradient.")
        x = self.check_states(x).detach().requires_grad_(True)
        with torch.enable_grad():
            log_r = self.log_r(x).sum()
            (grad,) = torch.autograd.grad(log_r, x)
        return grad.detach()

    def exact_sample(self, rng, count):
        """
        Draw ``count`` i.i.d. samples from the normalised target.

        Parameters
        ----------
        rng : numpy.random.Generator
            Source of randomness; the result is deterministic given its state.
        count : int
            Number of samples.

        Returns
        -------
        numpy.ndarray
            Samples of shape ``(count, dim)``.
        """
        raise CapabilityError(f"Target {self.name} has no exact sampler.")

    def to_dict(self):
        """dict: Options that rebuild this target through :func:`make_target`."""
        return {"name": self.name, "dim": self.dim}

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


def gaussian_log_pdf(x, mean, log_var):
    """
    Elementwise log-density of ``N(mean, exp(log_var))``.

    All arguments broadcast; no reduction is performed.
    """
    log_var = torch.as_tensor(log_var, dtype=torch.float64)
    return -0.5 * (np.log(2 * np.pi) + log_var + (x - mean) ** 2 * torch.exp(-log_var))
