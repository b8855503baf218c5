import logging

import numpy as np
import torch

from gfnsmc.autodiff import DTYPE
from gfnsmc.exceptions import ConfigError, ContractError
from gfnsmc.process.base import GenerativeProcess
from gfnsmc.process.policy import unwrap_behaviour
from gfnsmc.targets.sequence import PAD, strings_from_tokens, tokens_from_strings

logger = logging.getLogger(__name__)


class PrependAppendProcess(GenerativeProcess):
    """
    Builds strings of length ``N`` from the empty string by prepending or
    appending one symbol per step.

    The state at step ``n`` is a string of length ``n``, stored as a row of
    ``N`` token ids padded with :data:`~gfnsmc.targets.sequence.PAD`. The policy
    network reads the one-hot encoding of the padded string plus a length
    channel ``n / N`` and outputs ``2|V|`` logits: prepend ``v`` for ``v < |V|``,
    append ``v - |V|`` otherwise. A child reachable by both kinds of action
    (for example any one-symbol string) receives the sum of their
    probabilities.

    The backward kernel is uniform over the distinct parents of a state:
    remove the first symbol or remove the last one.

    Parameters
    ----------
    target : SequenceReward
    """

    name = "prepend_append"

    def __init__(self, target):
        super().__init__(target)
        if not target.is_discrete:
            raise ConfigError("The prepend/append process needs a sequence target.")
        if len(target.vocab) == 0:
            raise ConfigError("Cannot sample from an empty vocabulary.")

    @property
    def vocab(self) -> str:
        return self.target.vocab

    @property
    def n_steps(self):
        return self.target.length

    @property
    def is_discrete(self):
        return True

    @property
    def feature_dim(self):
        return self.n_steps * len(self.vocab) + 1

    @property
    def policy_output_dim(self):
        return 2 * len(self.vocab)

    def features(self, x, n):
        x = np.asarray(x)
        one_hot = np.zeros(x.shape + (len(self.vocab),))
        rows, columns = np.nonzero(x != PAD)
        one_hot[rows, columns, x[rows, columns]] = 1.0
        one_hot = one_hot.reshape(x.shape[0], -1)
        length = np.full((x.shape[0], 1), n / self.n_steps)
        return torch.as_tensor(np.concatenate([one_hot, length], axis=1), dtype=DTYPE)

    def log_action_probs(self, policy, x, n):
        """``(K, 2|V|)`` log-probabilities of the actions at states ``x``."""
        return torch.log_softmax(policy.drift(self.features(x, n)), dim=-1)

    def apply(self, x, n, actions):
        """Children of the length-``n`` states ``x`` under ``actions``."""
        x = np.asarray(x)
        actions = np.asarray(actions)
        size = len(self.vocab)
        child = np.full_like(x, PAD)
        prepend = actions < size
        child[prepend, 0] = actions[prepend]
        child[prepend, 1 : n + 1] = x[prepend, :n]
        append = ~prepend
        child[append, :n] = x[append, :n]
        child[append, n] = actions[append] - size
        return child

    def sample_initial(self, count, generator):
        return np.full((count, self.n_steps), PAD, dtype=np.int64)

    def log_p0(self, x):
        return torch.zeros(np.asarray(x).shape[0], dtype=DTYPE)

    def forward_step(self, behaviour, x, n, generator):
        policy, epsilon = unwrap_behaviour(behaviour)
        if n >= self.n_steps:
            raise ContractError(f"Cannot extend a complete string (step {n}).")
        with torch.no_grad():
            log_probs = self.log_action_probs(policy, x, n)
            actions = torch.multinomial(log_probs.exp(), 1, generator=generator)[:, 0]
            if epsilon > 0:
                count = log_probs.shape[0]
                explore = torch.rand(count, generator=generator, dtype=DTYPE) < epsilon
                uniform = torch.randint(
                    self.policy_output_dim, (count,), generator=generator
                )
                actions = torch.where(explore, uniform, actions)
            x_next = self.apply(x, n, actions.numpy())
            return x_next, self._log_child(log_probs, x, x_next, n)

    def _log_child(self, log_probs, x, x_next, n):
        x = np.asarray(x)
        x_next = np.asarray(x_next)
        size = len(self.vocab)
        rows = torch.arange(x.shape[0])
        by_prepend = np.all(x_next[:, 1 : n + 1] == x[:, :n], axis=1)
        by_append = np.all(x_next[:, :n] == x[:, :n], axis=1)
        first = torch.as_tensor(x_next[:, 0])
        last = torch.as_tensor(x_next[:, n] + size)
        minus_inf = torch.full((x.shape[0],), -np.inf, dtype=DTYPE)
        log_prepend = torch.where(
            torch.as_tensor(by_prepend), log_probs[rows, first], minus_inf
        )
        log_append = torch.where(
            torch.as_tensor(by_append), log_probs[rows, last], minus_inf
        )
        return torch.logaddexp(log_prepend, log_append)

    def log_forward(self, policy, x, x_next, n):
        return self._log_child(self.log_action_probs(policy, x, n), x, x_next, n)

    def _parents(self, x, n):
        # x has length n + 1; returns (remove-first, remove-last, distinct)
        x = np.asarray(x)
        remove_first = np.full_like(x, PAD)
        remove_first[:, :n] = x[:, 1 : n + 1]
        remove_last = np.full_like(x, PAD)
        remove_last[:, :n] = x[:, :n]
        distinct = np.any(remove_first != remove_last, axis=1)
        return remove_first, remove_last, distinct

    def backward_step(self, x, n, generator):
        remove_first, remove_last, distinct = self._parents(x, n)
        coin = torch.rand(len(distinct), generator=generator, dtype=DTYPE).numpy() < 0.5
        use_last = distinct & coin
        return np.where(use_last[:, None], remove_last, remove_first)

    def log_backward(self, x_prev, x, n):
        remove_first, remove_last, distinct = self._parents(x, n)
        x_prev = np.asarray(x_prev)
        is_parent = np.all(x_prev == remove_first, axis=1) | np.all(
            x_prev == remove_last, axis=1
        )
        log_prob = np.where(distinct, -np.log(2.0), 0.0)
        return torch.as_tensor(np.where(is_parent, log_prob, -np.inf), dtype=DTYPE)

    def stack(self, states):
        return np.stack([np.asarray(state) for state in states], axis=1)

    def take(self, x, index):
        return np.asarray(x)[np.asarray(index)]

    def to_numpy(self, x):
        return np.asarray(x, dtype=np.int64)

    def from_numpy(self, array):
        return np.asarray(array, dtype=np.int64).copy()


def discrete_parents(x):
    """
    Parents of the string ``x`` under the uniform backward kernel.

    Parameters
    ----------
    x : str
        A non-empty string.

    Returns
    -------
    dict
        ``parent string -> backward probability``.
    """
    if len(x) == 0:
        raise ContractError("The empty string has no parents.")
    parents = {x[1:], x[:-1]}
    return {parent: 1.0 / len(parents) for parent in sorted(parents)}


def prepend_append_step(policy, process, x, generator):
    """
    Extend the string ``x`` by one symbol.

    Returns
    -------
    tuple
        ``(child string, log-probability of the child)``.
    """
    tokens = tokens_from_strings([x], process.vocab, process.n_steps)
    child, log_fwd = process.forward_step(policy, tokens, len(x), generator)
    return strings_from_tokens(child, process.vocab)[0], float(log_fwd[0])
