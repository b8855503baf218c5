import logging
import os
import shutil
import zlib
from datetime import datetime

import numpy as np
import torch
from scipy.special import logsumexp

logger = logging.getLogger(__name__)


class RandomStreams(object):
    """
    Named random number streams derived from a run seed and an epoch counter.

    Each call to :meth:`torch` or :meth:`numpy` returns a fresh generator whose
    state depends only on ``(seed, epoch, name)``. A run resumed from a
    checkpoint at epoch ``k`` therefore draws exactly the numbers the
    uninterrupted run drew at epoch ``k``.

    Parameters
    ----------
    seed : int
        Non-negative run seed.
    epoch : int, optional, default=0
        Epoch counter mixed into every stream.
    """

    def __init__(self, seed, epoch=0):
        if int(seed) < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}.")
        self.seed = int(seed)
        self.epoch = int(epoch)

    def _sequence(self, name):
        return np.random.SeedSequence(
            [self.seed, self.epoch, zlib.crc32(name.encode("utf-8"))]
        )

    def torch(self, name):
        """torch.Generator: CPU generator for the stream ``name``."""
        state = self._sequence(name).generate_state(1, dtype=np.uint64)[0]
        generator = torch.Generator()
        generator.manual_seed(int(state))
        return generator

    def numpy(self, name):
        """numpy.random.Generator: PCG64 generator for the stream ``name``."""
        return np.random.default_rng(self._sequence(name))


def logmeanexp(log_values):
    """
    Log of the mean of ``exp(log_values)``, computed without overflow.

    Parameters
    ----------
    log_values : array_like or torch.Tensor
        One-dimensional array of log-values; ``-inf`` entries count as zeros.

    Returns
    -------
    float or torch.Tensor
        ``log(mean(exp(log_values)))``, a tensor if the input was one.
    """
    if isinstance(log_values, torch.Tensor):
        return torch.logsumexp(log_values, dim=-1) - np.log(log_values.shape[-1])
    log_values = np.asarray(log_values, dtype=np.float64)
    return float(logsumexp(log_values) - np.log(log_values.size))


def normalise_log_weights(log_w):
    """Shift log-weights so that they logsumexp to zero."""
    if isinstance(log_w, torch.Tensor):
        return log_w - torch.logsumexp(log_w, dim=-1)
    log_w = np.asarray(log_w, dtype=np.float64)
    return log_w - logsumexp(log_w)


def override_dict(dct, custom):
    """Overrides dictionary values from that of a custom dictionary.

    Parameters
    ----------
    dct: dict
        Python dictionary to override.
    custom: dict
        A custom dictionary which will overwrite the original dictionary. Keys with
        a value of ``None`` are skipped.
    """
    for key, value in custom.items():
        if value is not None:
            logger.debug(f"Overriding {key} = {value}")
            dct[key] = value


def make_run_dir(path, stash_existing=False):
    """
    Create the output directory of a training run.

    Parameters
    ----------
    path : os.PathLike
        Directory that will hold ``metrics.csv``, checkpoints and the log file.
    stash_existing : bool, optional, default=False
        Move an existing directory aside, suffixed with the current time.

    Returns
    -------
    str
        The created directory.
    """
    path = os.fspath(path)
    if stash_existing and os.path.isdir(path):
        stash_dir = path.rstrip(os.sep) + "_{:%Y.%m.%d_%H.%M.%S}".format(
            datetime.now()
        )
        logger.info(f"Moving existing run directory to {stash_dir}")
        shutil.move(path, stash_dir)
    os.makedirs(path, exist_ok=True)
    return path


def is_file_and_not_empty(file_path):
    """Check that a file both exists at ``file_path`` and is not empty.

    Parameters
    ----------
    file_path: os.PathLike
        The file path to check.

    Returns
    -------
    bool
        That a file both exists at the specified ``path`` and is not empty.
    """
    return os.path.isfile(file_path) and (os.path.getsize(file_path) != 0)
