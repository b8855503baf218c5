"""
Unnormalised target densities.
"""
import inspect
import logging

from gfnsmc.exceptions import ConfigError
from gfnsmc.targets.base import Target
from gfnsmc.targets.funnel import Funnel, funnel_log_density
from gfnsmc.targets.gmm import GaussianMixture, gmm_log_density
from gfnsmc.targets.manywell import ManyWell, manywell_log_density
from gfnsmc.targets.planted import PlantedMixture
from gfnsmc.targets.sequence import (
    SequenceReward,
    strings_from_tokens,
    tokens_from_strings,
)

logger = logging.getLogger(__name__)

TARGETS = {
    "gmm40": GaussianMixture,
    "gmm": GaussianMixture,
    "funnel": Funnel,
    "manywell": ManyWell,
    "planted": PlantedMixture,
    "sequence": SequenceReward,
}


def make_target(options):
    """
    Build a target from its configuration dictionary.

    Parameters
    ----------
    options : dict
        ``{"name": ..., **constructor arguments}``, e.g.
        ``{"name": "gmm40", "dim": 2, "seed": 0}``.

    Returns
    -------
    Target
        The target instance.
    """
    options = dict(options)
    name = options.pop("name", None)
    if name not in TARGETS:
        raise ConfigError(f"Unknown target {name!r}; choose from {sorted(TARGETS)}.")
    cls = TARGETS[name]
    accepted = set(inspect.signature(cls.__init__).parameters) - {"self"}
    unknown = sorted(set(options) - accepted)
    if unknown:
        raise ConfigError(f"Unknown options for target {name!r}: {unknown}.")
    target = cls(**options)
    logger.debug(f"Built target {target}")
    return target


def exact_sample(target, rng, count):
    """
    Draw ``count`` exact samples from ``target``.

    Raises
    ------
    CapabilityError
        If the target has no exact sampler.
    """
    return target.exact_sample(rng, count)


__all__ = [
    "Target",
    "GaussianMixture",
    "Funnel",
    "ManyWell",
    "PlantedMixture",
    "SequenceReward",
    "make_target",
    "exact_sample",
    "gmm_log_density",
    "funnel_log_density",
    "manywell_log_density",
    "tokens_from_strings",
    "strings_from_tokens",
]
