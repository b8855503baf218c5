"""
Exhaustive enumeration of small prepend/append environments.

The state space is a DAG whose nodes are strings: the empty string at the root
and the complete strings of length ``N`` at the leaves. A node is identified
by its string, so two actions that produce the same child are merged.
"""
import logging

import numpy as np
import torch
from scipy.special import logsumexp

from gfnsmc.exceptions import CapabilityError, ConfigError
from gfnsmc.process.sequence import PrependAppendProcess
from gfnsmc.targets.sequence import (
    ENUMERATION_BUDGET,
    SequenceReward,
    strings_from_tokens,
    tokens_from_strings,
)

logger = logging.getLogger(__name__)


def _parents(string):
    return sorted({string[1:], string[:-1]})


def _action_multiplicity(parent, child):
    # number of prepend/append actions turning parent into child; the first
    # step from the empty string counts once
    if len(parent) == 0:
        return 1
    return int(child == child[0] + parent) + int(child == parent + child[-1])


class EnumerationTable(object):
    """
    Every complete string of a sequence target with its exact reward and the
    number of trajectories reaching it.

    Attributes
    ----------
    terminals : list of str
        All strings of length ``N`` in lexicographic token order.
    log_r : numpy.ndarray
        Their log-rewards.
    log_z : float
        Exact log normaliser.
    n_state_paths : dict
        ``string -> number of distinct state sequences from the empty string``.
    n_action_paths : dict
        ``string -> number of action sequences``, with the two actions of the
        first step merged. Never exceeds :math:`2^{N-1}`.
    """

    def __init__(self, target):
        if not isinstance(target, SequenceReward):
            raise ConfigError("Only sequence targets can be enumerated.")
        self.target = target
        tokens, log_r = target.terminals()
        self.terminals = strings_from_tokens(tokens, target.vocab)
        self.log_r = np.asarray(log_r, dtype=np.float64)
        self.log_z = float(logsumexp(self.log_r))
        self.n_state_paths, self.n_action_paths = self._count_paths()
        logger.debug(
            f"Enumerated {len(self.terminals)} strings; log Z = {self.log_z:.6f}"
        )

    @property
    def vocab(self) -> str:
        return self.target.vocab

    @property
    def length(self) -> int:
        return self.target.length

    @property
    def z(self) -> float:
        """float: Exact normaliser :math:`Z = \\sum_x R(x)`."""
        return float(np.exp(self.log_z))

    def _count_paths(self):
        state_paths = {"": 1}
        action_paths = {"": 1}
        layer = [""]
        for _ in range(self.length):
            children = sorted(
                {s for p in layer for v in self.vocab for s in (v + p, p + v)}
            )
            for child in children:
                parents = _parents(child)
                state_paths[child] = sum(state_paths[p] for p in parents)
                action_paths[child] = sum(
                    action_paths[p] * _action_multiplicity(p, child) for p in parents
                )
            layer = children
        return (
            {x: state_paths[x] for x in self.terminals},
            {x: action_paths[x] for x in self.terminals},
        )

    def trajectories(self, terminal):
        """
        All state sequences from the empty string to ``terminal``.

        Returns
        -------
        list of tuple of str
        """
        if len(terminal) == 0:
            return [("",)]
        return [
            path + (terminal,)
            for parent in _parents(terminal)
            for path in self.trajectories(parent)
        ]

    def target_distribution(self):
        """``string -> pi(x)``, the normalised reward."""
        return dict(zip(self.terminals, np.exp(self.log_r - self.log_z)))


def enumerate_table(target):
    """
    Enumerate a sequence target.

    Parameters
    ----------
    target : SequenceReward

    Returns
    -------
    EnumerationTable

    Raises
    ------
    CapabilityError
        If :math:`|V|^N` exceeds :data:`~gfnsmc.targets.sequence.ENUMERATION_BUDGET`.
    """
    count = len(target.vocab) ** target.length
    if count > ENUMERATION_BUDGET:
        raise CapabilityError(
            f"{count} terminal strings exceed the enumeration budget of {ENUMERATION_BUDGET}."
        )
    return EnumerationTable(target)


def exact_policy_marginal(table, policy, process=None):
    """
    Exact terminal marginal :math:`p_\\theta(x)` of a forward policy.

    Probabilities are propagated layer by layer through the DAG, summing over
    every trajectory into each string.

    Parameters
    ----------
    table : EnumerationTable
    policy : Policy
    process : PrependAppendProcess, optional
        Built from ``table.target`` when omitted.

    Returns
    -------
    dict
        ``string -> probability``; the values sum to one.
    """
    process = PrependAppendProcess(table.target) if process is None else process
    size = process.policy_output_dim
    layer = {"": 1.0}
    with torch.no_grad():
        for n in range(table.length):
            strings = sorted(layer)
            tokens = tokens_from_strings(strings, table.vocab, table.length)
            probs = process.log_action_probs(policy, tokens, n).exp().numpy()
            children = {}
            for action in range(size):
                child_tokens = process.apply(tokens, n, np.full(len(strings), action))
                child_strings = strings_from_tokens(child_tokens, table.vocab)
                for row, child in enumerate(child_strings):
                    mass = layer[strings[row]] * probs[row, action]
                    children[child] = children.get(child, 0.0) + mass
            layer = children
    return {x: layer.get(x, 0.0) for x in table.terminals}


def l1_distance(marginal, table):
    """:math:`\\sum_x |p(x) - \\pi(x)|` between a marginal and the target."""
    pi = table.target_distribution()
    return float(sum(abs(marginal.get(x, 0.0) - pi[x]) for x in table.terminals))
