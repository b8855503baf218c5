import itertools
import logging

import numpy as np
import torch
from scipy.special import logsumexp

from gfnsmc.exceptions import CapabilityError, ConfigError, InputError
from gfnsmc.targets.base import Target

logger = logging.getLogger(__name__)

#: Largest number of terminal strings that will be listed explicitly.
ENUMERATION_BUDGET = 10 ** 6

#: Token used to pad strings shorter than the full length.
PAD = -1


def tokens_from_strings(strings, vocab, length):
    """
    Encode strings as a padded integer array.

    Parameters
    ----------
    strings : list of str
        Strings over ``vocab`` of length at most ``length``.
    vocab : str
        The alphabet; token ``i`` is ``vocab[i]``.
    length : int
        Width of the returned array.

    Returns
    -------
    numpy.ndarray
        ``(len(strings), length)`` array of token ids, padded with :data:`PAD`.
    """
    tokens = np.full((len(strings), length), PAD, dtype=np.int64)
    for row, string in enumerate(strings):
        if len(string) > length:
            raise InputError(f"String {string!r} is longer than {length}.")
        for column, char in enumerate(string):
            if char not in vocab:
                raise InputError(f"Symbol {char!r} is not in the vocabulary {vocab!r}.")
            tokens[row, column] = vocab.index(char)
    return tokens


def strings_from_tokens(tokens, vocab):
    """Decode a padded token array (or a single row) into strings."""
    tokens = np.atleast_2d(np.asarray(tokens))
    return ["".join(vocab[t] for t in row if t != PAD) for row in tokens]


def _log_reward_uniform(tokens):
    return np.zeros(tokens.shape[:-1])


def _log_reward_count_a_pow2(tokens):
    # R(x) = 2 ** (number of occurrences of the first vocabulary symbol)
    return np.log(2.0) * (tokens == 0).sum(-1)


REWARDS = {
    "uniform": _log_reward_uniform,
    "count_a_pow2": _log_reward_count_a_pow2,
}


class SequenceReward(Target):
    """
    Reward over complete strings of a fixed length.

    States are integer arrays of shape ``(..., length)`` holding token ids (see
    :func:`tokens_from_strings`). The terminal space is small enough to be
    listed, which gives the exact normaliser and an exact sampler.

    Parameters
    ----------
    vocab : str, optional, default="AB"
        The alphabet.
    length : int, optional, default=4
        Length ``N`` of complete strings.
    reward : str, optional, default="count_a_pow2"
        One of :data:`REWARDS`.
    """

    name = "sequence"

    def __init__(self, vocab="AB", length=4, reward="count_a_pow2"):
        super().__init__(length)
        if len(vocab) == 0:
            raise ConfigError("The vocabulary must not be empty.")
        if len(set(vocab)) != len(vocab):
            raise ConfigError(f"The vocabulary {vocab!r} has repeated symbols.")
        if reward not in REWARDS:
            raise ConfigError(
                f"Unknown reward {reward!r}; choose from {sorted(REWARDS)}."
            )
        self._vocab = str(vocab)
        self._reward = reward
        self._terminals = None
        self._log_rewards = None

    @property
    def vocab(self) -> str:
        """str: The alphabet."""
        return self._vocab

    @property
    def length(self) -> int:
        """int: Length of complete strings."""
        return self.dim

    @property
    def reward(self) -> str:
        """str: Name of the reward function."""
        return self._reward

    @property
    def has_gradient(self):
        return False

    @property
    def has_sampler(self):
        return True

    @property
    def is_discrete(self):
        return True

    def check_states(self, x):
        x = np.asarray(x.cpu().numpy() if isinstance(x, torch.Tensor) else x)
        if x.ndim == 0 or x.shape[-1] != self.length:
            raise InputError(
                f"Expected token arrays of length {self.length}, got {x.shape}."
            )
        if np.any(x < 0) or np.any(x >= len(self.vocab)):
            raise InputError("Complete strings cannot contain padding tokens.")
        return x.astype(np.int64)

    def log_r(self, x):
        tokens = self.check_states(x)
        return torch.as_tensor(REWARDS[self._reward](tokens), dtype=torch.float64)

    def terminals(self):
        """
        List every complete string.

        Returns
        -------
        tuple of numpy.ndarray
            Token array ``(|V|^N, N)`` and the matching log-rewards.
        """
        if self._terminals is None:
            count = len(self.vocab) ** self.length
            if count > ENUMERATION_BUDGET:
                raise CapabilityError(
                    f"{count} terminal strings exceed the enumeration budget "
                    f"of {ENUMERATION_BUDGET}."
                )
            self._terminals = np.array(
                list(itertools.product(range(len(self.vocab)), repeat=self.length)),
                dtype=np.int64,
            ).reshape(count, self.length)
            self._log_rewards = REWARDS[self._reward](self._terminals)
        return self._terminals, self._log_rewards

    @property
    def exact_log_z(self):
        _, log_rewards = self.terminals()
        return float(logsumexp(log_rewards))

    def exact_sample(self, rng, count):
        terminals, log_rewards = self.terminals()
        probabilities = np.exp(log_rewards - logsumexp(log_rewards))
        index = rng.choice(len(terminals), size=int(count), p=probabilities)
        return terminals[index]

    def to_dict(self):
        return {
            "name": self.name,
            "vocab": self.vocab,
            "length": self.length,
            "reward": self.reward,
        }
