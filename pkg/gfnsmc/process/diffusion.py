import logging

import numpy as np
import torch
from torch.distributions import Normal

from gfnsmc.autodiff import DTYPE
from gfnsmc.exceptions import CapabilityError, ConfigError, ContractError, InputError
from gfnsmc.process.base import GenerativeProcess
from gfnsmc.process.policy import unwrap_behaviour

logger = logging.getLogger(__name__)

#: Largest fraction of the initial signal variance allowed to survive the chain.
MIXING_THRESHOLD = 0.05


class DiffusionSchedule(object):
    """
    Discretised Ornstein-Uhlenbeck noising schedule.

    Transition ``n`` (between steps ``n`` and ``n + 1``) uses
    :math:`\\alpha_n`; with a constant rate ``b`` every step has
    :math:`\\alpha = 1 - e^{-2b/N}`, so the chain keeps a fraction
    :math:`\\prod_n (1 - \\alpha_n) = e^{-2b}` of the initial signal variance.

    Parameters
    ----------
    n_steps : int
        Number of transitions ``N``.
    sigma : float, optional, default=1.0
        Scale of the reference distribution :math:`p_0 = \\mathcal{N}(0, \\sigma^2 I)`.
    ou_rate : float, optional, default=2.5
        Constant rate ``b``.
    alpha : array_like, optional
        Explicit per-transition :math:`\\alpha_n`; overrides ``ou_rate``.
    check_mixing : bool, optional, default=True
        Reject schedules whose residual variance fraction exceeds
        :data:`MIXING_THRESHOLD`.
    """

    def __init__(self, n_steps, sigma=1.0, ou_rate=2.5, alpha=None, check_mixing=True):
        if int(n_steps) < 1:
            raise ConfigError(f"n_steps must be at least 1, got {n_steps}.")
        if sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {sigma}.")
        if alpha is None:
            if ou_rate <= 0:
                raise ConfigError(f"ou_rate must be positive, got {ou_rate}.")
            alpha = np.full(int(n_steps), 1.0 - np.exp(-2.0 * ou_rate / n_steps))
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (int(n_steps),):
            raise ConfigError(f"alpha must have {n_steps} entries, got {alpha.shape}.")
        if np.any(alpha <= 0) or np.any(alpha >= 1):
            raise ConfigError("Every alpha_n must lie strictly between 0 and 1.")
        self._n_steps = int(n_steps)
        self._sigma = float(sigma)
        self._ou_rate = float(ou_rate)
        self._alpha = alpha
        if check_mixing and self.residual_variance > MIXING_THRESHOLD:
            raise ConfigError(
                f"The schedule does not mix: a fraction {self.residual_variance:.3g} "
                f"of the initial variance survives (limit {MIXING_THRESHOLD})."
            )

    @property
    def n_steps(self) -> int:
        """int: Number of transitions ``N``."""
        return self._n_steps

    @property
    def sigma(self) -> float:
        """float: Reference scale :math:`\\sigma`."""
        return self._sigma

    @property
    def ou_rate(self) -> float:
        """float: The constant rate ``b``."""
        return self._ou_rate

    @property
    def alpha(self):
        """numpy.ndarray: Per-transition :math:`\\alpha_n`, shape ``(N,)``."""
        return self._alpha

    @property
    def residual_mean(self) -> float:
        """float: :math:`\\prod_n \\sqrt{1 - \\alpha_n}`."""
        return float(np.prod(np.sqrt(1.0 - self._alpha)))

    @property
    def residual_variance(self) -> float:
        """float: :math:`\\prod_n (1 - \\alpha_n)`."""
        return float(np.prod(1.0 - self._alpha))

    def to_dict(self):
        return {"n_steps": self.n_steps, "sigma": self.sigma, "ou_rate": self.ou_rate}


def gaussian_logpdf(x, mean, std):
    """Log-density of an isotropic Gaussian, summed over the last axis."""
    return Normal(mean, std).log_prob(x).sum(-1)


def backward_kernel_logpdf(schedule, x_prev, x, n):
    """
    Log-density of the backward kernel from step ``n`` to step ``n - 1``.

    .. math ::
        \\log \\mathcal{N}(x_{n-1}; \\sqrt{1 - \\alpha} \\, x_n, \\sigma^2 \\alpha I)

    Parameters
    ----------
    schedule : DiffusionSchedule
    x_prev : torch.Tensor
        :math:`x_{n-1}`, shape ``(..., d)``.
    x : torch.Tensor
        :math:`x_n`, shape ``(..., d)``.
    n : int
        Step of ``x``, ``1 <= n <= N``.

    Returns
    -------
    torch.Tensor
        Log-densities of shape ``(...)``.
    """
    if not 1 <= n <= schedule.n_steps:
        raise ContractError(f"Backward step index must be in [1, N], got {n}.")
    x_prev = torch.as_tensor(x_prev, dtype=DTYPE)
    x = torch.as_tensor(x, dtype=DTYPE)
    if x_prev.shape != x.shape:
        raise InputError(f"Shape mismatch {tuple(x_prev.shape)} vs {tuple(x.shape)}.")
    alpha = float(schedule.alpha[n - 1])
    return gaussian_logpdf(
        x_prev, np.sqrt(1.0 - alpha) * x, schedule.sigma * np.sqrt(alpha)
    )


class DiffusionProcess(GenerativeProcess):
    """
    Discretised diffusion sampler.

    .. math ::
        p_\\theta(x_{n+1} \\mid x_n) = \\mathcal{N}\\big(\\sqrt{1-\\alpha_n} x_n
        + \\alpha_n \\tilde f_\\theta(x_n, n/N), \\sigma^2 \\alpha_n I\\big)

    With ``langevin`` enabled the drift is
    :math:`\\tilde f_\\theta = NN_1(x, t) + NN_2(t) \\nabla \\log R(x)`, where
    the score is clipped to norm ``langevin_clip``.

    Parameters
    ----------
    target : Target
    schedule : DiffusionSchedule
    langevin : bool, optional, default=False
    langevin_clip : float, optional, default=100.0
    """

    name = "diffusion"

    def __init__(self, target, schedule, langevin=False, langevin_clip=1e2):
        super().__init__(target)
        if target.is_discrete:
            raise ConfigError("The diffusion process needs a continuous target.")
        if langevin and not target.has_gradient:
            raise CapabilityError(
                f"Langevin drift needs the gradient of target {target.name}."
            )
        self._schedule = schedule
        self._langevin = bool(langevin)
        self._langevin_clip = float(langevin_clip)
        self._alpha = torch.as_tensor(schedule.alpha, dtype=DTYPE)

    @property
    def schedule(self):
        """DiffusionSchedule: The noising schedule."""
        return self._schedule

    @property
    def langevin(self) -> bool:
        return self._langevin

    @property
    def n_steps(self):
        return self._schedule.n_steps

    @property
    def dim(self) -> int:
        return self.target.dim

    @property
    def feature_dim(self):
        return self.dim + 1

    @property
    def policy_output_dim(self):
        return self.dim

    def features(self, x, n):
        t = torch.full(x.shape[:-1] + (1,), n / self.n_steps, dtype=DTYPE)
        return torch.cat([x, t], dim=-1)

    def clipped_score(self, x):
        """Target score :math:`\\nabla \\log R(x)` with norm at most ``langevin_clip``."""
        grad = self.target.grad_log_r(x)
        norm = grad.norm(dim=-1, keepdim=True)
        factor = torch.clamp(self._langevin_clip / (norm + 1e-300), max=1.0)
        return grad * factor

    def drift(self, policy, x, n):
        """:math:`\\tilde f_\\theta(x, n/N)` for states ``x`` at step ``n``."""
        if policy.langevin and not self._langevin:
            raise ConfigError("A Langevin policy was given to a plain diffusion process.")
        value = policy.drift(self.features(x, n))
        if self._langevin:
            t = torch.full(x.shape[:-1] + (1,), n / self.n_steps, dtype=DTYPE)
            value = value + policy.langevin_scale(t) * self.clipped_score(x)
        return value

    def forward_mean(self, policy, x, n):
        alpha = self._alpha[n]
        return torch.sqrt(1.0 - alpha) * x + alpha * self.drift(policy, x, n)

    def forward_std(self, n):
        return self.schedule.sigma * torch.sqrt(self._alpha[n])

    def sample_initial(self, count, generator):
        noise = torch.randn((count, self.dim), generator=generator, dtype=DTYPE)
        return self.schedule.sigma * noise

    def log_p0(self, x):
        return gaussian_logpdf(x, torch.zeros_like(x), self.schedule.sigma)

    def forward_step(self, behaviour, x, n, generator):
        policy, epsilon = unwrap_behaviour(behaviour)
        if epsilon > 0:
            raise CapabilityError("Epsilon exploration needs a discrete process.")
        with torch.no_grad():
            mean = self.forward_mean(policy, x, n)
            std = self.forward_std(n)
            noise = torch.randn(x.shape, generator=generator, dtype=DTYPE)
            x_next = mean + std * noise
            return x_next, gaussian_logpdf(x_next, mean, std)

    def log_forward(self, policy, x, x_next, n):
        return gaussian_logpdf(x_next, self.forward_mean(policy, x, n), self.forward_std(n))

    def backward_step(self, x, n, generator):
        alpha = self._alpha[n]
        noise = torch.randn(x.shape, generator=generator, dtype=DTYPE)
        return torch.sqrt(1.0 - alpha) * x + self.schedule.sigma * torch.sqrt(alpha) * noise

    def log_backward(self, x_prev, x, n):
        return backward_kernel_logpdf(self.schedule, x_prev, x, n + 1)

    def stack(self, states):
        return torch.stack(states, dim=1)

    def take(self, x, index):
        return x[torch.as_tensor(index)]

    def to_numpy(self, x):
        return x.detach().cpu().numpy().astype(np.float64)

    def from_numpy(self, array):
        return torch.as_tensor(np.asarray(array, dtype=np.float64)).clone()

    def score_forward(self, policy, states):
        count, length, dim = states.shape
        n_steps = length - 1
        x = states[:, :-1]
        x_next = states[:, 1:]
        t = (torch.arange(n_steps, dtype=DTYPE) / n_steps).expand(count, n_steps)
        value = policy.drift(torch.cat([x, t.unsqueeze(-1)], dim=-1))
        if self._langevin:
            score = self.clipped_score(x.reshape(-1, dim)).reshape(x.shape)
            value = value + policy.langevin_scale(t.unsqueeze(-1)) * score
        alpha = self._alpha.view(1, n_steps, 1)
        mean = torch.sqrt(1.0 - alpha) * x + alpha * value
        std = self.schedule.sigma * torch.sqrt(alpha)
        return gaussian_logpdf(x_next, mean, std)


def forward_policy_step(policy, process, x, n, generator):
    """
    One forward transition of the diffusion sampler.

    Returns
    -------
    tuple
        ``(x_next, log_fwd)``.
    """
    return process.forward_step(policy, torch.as_tensor(x, dtype=DTYPE), n, generator)
