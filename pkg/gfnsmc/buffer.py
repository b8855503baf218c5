"""
Importance-weighted experience replay.

Terminal states are stored batch by batch with the combined log-weight
:math:`\\log(K \\hat Z w)`, so that on-policy (annealed importance) and SMC
batches share one scale and the weighted empirical measure of the buffer
approximates the target.
"""
import collections
import csv
import logging

import numpy as np
import torch
from scipy.special import logsumexp

from gfnsmc.exceptions import CapabilityError, ConfigError, ContractError, InputError
from gfnsmc.utils import logmeanexp

logger = logging.getLogger(__name__)

#: Priority offset of the loss-prioritised mode.
LOSS_PRIORITY_EPSILON = 0.01

DRAW_MODES = ("iw", "uniform", "reward", "loss")

#: Self-normalised weights at the start of an SMC segment and the per-particle
#: log-increment accumulated over the segment.
SegmentRecord = collections.namedtuple("SegmentRecord", ["log_w_start", "log_increment"])

#: A read-only view of one stored sample.
BufferEntry = collections.namedtuple(
    "BufferEntry",
    ["uid", "state", "log_weight", "batch_id", "epoch", "log_r", "loss", "provenance"],
)


def batch_z_ais(log_w):
    """
    Normalising-constant estimate of an on-policy batch: ``logmeanexp(log_w)``.
    """
    if isinstance(log_w, torch.Tensor):
        log_w = log_w.detach().numpy()
    log_w = np.asarray(log_w, dtype=np.float64)
    if log_w.size == 0:
        raise ContractError("Cannot estimate Z from an empty batch.")
    return logmeanexp(log_w)


def batch_z_smc(records):
    """
    Normalising-constant estimate of an SMC batch.

    .. math ::
        \\log \\hat Z = \\sum_j \\log \\sum_k W^k_{j} \\tilde w^k_{j}

    with :math:`W_j` the self-normalised weights at the start of segment ``j``
    and :math:`\\tilde w_j` the segment increments.

    Parameters
    ----------
    records : list of SegmentRecord

    Returns
    -------
    float
    """
    total = 0.0
    for record in records:
        log_start = np.asarray(record.log_w_start, dtype=np.float64)
        log_increment = np.asarray(record.log_increment, dtype=np.float64)
        total += float(logsumexp(log_start + log_increment))
    return total


class ReplayBuffer(object):
    """
    A bounded store of weighted terminal states.

    Entries are kept in insertion order and evicted oldest batch first, so a
    batch is either fully present or fully gone.

    Parameters
    ----------
    capacity : int
        Maximum number of stored states.
    mode : str, optional, default="iw"
        Default prioritisation: ``"iw"`` (tempered importance weights),
        ``"uniform"``, ``"reward"`` (tempered rewards) or ``"loss"`` (cached
        training losses).
    """

    def __init__(self, capacity, mode="iw"):
        if int(capacity) < 1:
            raise ConfigError(f"Buffer capacity must be positive, got {capacity}.")
        if mode not in DRAW_MODES:
            raise ConfigError(f"Unknown buffer mode {mode!r}; choose from {DRAW_MODES}.")
        self.capacity = int(capacity)
        self.mode = mode
        self.states = None
        self.log_weights = np.zeros(0)
        self.log_r = np.zeros(0)
        self.losses = np.zeros(0)
        self.batch_ids = np.zeros(0, dtype=np.int64)
        self.epochs = np.zeros(0, dtype=np.int64)
        self.uids = np.zeros(0, dtype=np.int64)
        self.provenance = np.zeros(0, dtype="<U16")
        self.next_batch_id = 0
        self.next_uid = 0
        self.last_lambda = None

    def __len__(self):
        return len(self.log_weights)

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    @property
    def n_batches(self) -> int:
        """int: Number of distinct batches currently stored."""
        return len(np.unique(self.batch_ids))

    def entry(self, position):
        """The :class:`BufferEntry` at ``position`` (0 is the oldest)."""
        return BufferEntry(
            int(self.uids[position]),
            self.states[position].copy(),
            float(self.log_weights[position]),
            int(self.batch_ids[position]),
            int(self.epochs[position]),
            float(self.log_r[position]),
            float(self.losses[position]),
            str(self.provenance[position]),
        )

    def insert(self, states, log_weights, log_r, provenance, epoch=0, losses=None):
        """
        Append one batch, evicting the oldest batches if needed.

        Parameters
        ----------
        states : numpy.ndarray
            ``(K, ...)`` terminal states.
        log_weights : array_like
            ``(K,)`` combined log-weights; non-finite entries are dropped.
        log_r : array_like
            ``(K,)`` log-rewards of the states.
        provenance : str
            Where the batch came from (``"on_policy"`` or ``"smc"``).
        epoch : int, optional, default=0
        losses : array_like, optional
            Training losses of the samples, cached for loss-prioritised draws.

        Returns
        -------
        int
            The batch id assigned.
        """
        states = np.asarray(states)
        log_weights = np.asarray(log_weights, dtype=np.float64).reshape(-1)
        log_r = np.asarray(log_r, dtype=np.float64).reshape(-1)
        count = len(log_weights)
        if losses is None:
            losses = np.full(count, np.nan)
        losses = np.asarray(losses, dtype=np.float64).reshape(-1)
        if states.shape[0] != count or len(log_r) != count:
            raise InputError(
                f"Inserted {states.shape[0]} states with {count} weights "
                f"and {len(log_r)} rewards."
            )
        if count > self.capacity:
            raise ConfigError(
                f"A batch of {count} does not fit into a buffer of capacity {self.capacity}."
            )
        finite = np.isfinite(log_weights)
        if not np.all(finite):
            logger.warning(f"Dropping {int((~finite).sum())} samples with non-finite weights.")
            states, log_weights = states[finite], log_weights[finite]
            log_r, losses = log_r[finite], losses[finite]
            count = len(log_weights)

        batch_id = self.next_batch_id
        self.next_batch_id += 1
        uids = np.arange(self.next_uid, self.next_uid + count, dtype=np.int64)
        self.next_uid += count

        if self.states is None:
            self.states = np.zeros((0,) + states.shape[1:], dtype=states.dtype)
        self.states = np.concatenate([self.states, states])
        self.log_weights = np.concatenate([self.log_weights, log_weights])
        self.log_r = np.concatenate([self.log_r, log_r])
        self.losses = np.concatenate([self.losses, losses])
        self.batch_ids = np.concatenate([self.batch_ids, np.full(count, batch_id)])
        self.epochs = np.concatenate([self.epochs, np.full(count, int(epoch))])
        self.uids = np.concatenate([self.uids, uids])
        self.provenance = np.concatenate(
            [self.provenance, np.full(count, str(provenance), dtype="<U16")]
        )
        self._evict()
        logger.debug(f"Inserted batch {batch_id} ({count} samples); size {len(self)}")
        return batch_id

    def _evict(self):
        while len(self) > self.capacity:
            oldest = self.batch_ids[0]
            keep = self.batch_ids != oldest
            logger.debug(f"Evicting batch {oldest} ({int((~keep).sum())} samples)")
            self._select(keep)

    def _select(self, mask):
        self.states = self.states[mask]
        for name in ("log_weights", "log_r", "losses", "batch_ids", "epochs", "uids", "provenance"):
            setattr(self, name, getattr(self, name)[mask])

    def priorities(self, gamma, mode=None):
        """
        Log-priorities of every entry under ``mode``.

        Returns
        -------
        tuple
            ``(log-priorities, lambda)``; lambda is ``None`` for the untempered modes.
        """
        from gfnsmc.smc import adaptive_iw_tempering, temper

        mode = self.mode if mode is None else mode
        if mode == "uniform":
            return np.zeros(len(self)), None
        if mode in ("iw", "reward"):
            values = self.log_weights if mode == "iw" else self.log_r
            lam = adaptive_iw_tempering(values, gamma, threshold=gamma * len(self))
            return temper(values, lam), lam
        if mode == "loss":
            seen = np.isfinite(self.losses)
            if not np.any(seen):
                raise CapabilityError(
                    "Loss-prioritised draws need cached losses; none have been recorded."
                )
            losses = np.where(seen, self.losses, np.max(self.losses[seen]))
            return np.log(losses + LOSS_PRIORITY_EPSILON), None
        raise ConfigError(f"Unknown buffer mode {mode!r}; choose from {DRAW_MODES}.")

    def draw(self, count, gamma, rng, mode=None):
        """
        Draw ``count`` stored states with replacement.

        Parameters
        ----------
        count : int
        gamma : float
            ESS fraction for the tempered modes; the threshold is ``gamma * len(self)``.
        rng : numpy.random.Generator
        mode : str, optional
            Overrides the buffer's default mode.

        Returns
        -------
        tuple
            ``(states, uids, lambda)``.
        """
        if self.is_empty:
            raise ContractError("Cannot draw from an empty buffer.")
        log_priorities, lam = self.priorities(gamma, mode)
        probabilities = np.exp(log_priorities - logsumexp(log_priorities))
        probabilities = probabilities / probabilities.sum()
        index = rng.choice(len(self), size=count, replace=True, p=probabilities)
        self.last_lambda = lam
        return self.states[index].copy(), self.uids[index].copy(), lam

    def update_losses(self, uids, losses):
        """Cache the latest training loss of the entries ``uids`` (still stored ones only)."""
        uids = np.asarray(uids, dtype=np.int64)
        losses = np.asarray(losses, dtype=np.float64)
        position = {uid: i for i, uid in enumerate(self.uids)}
        for uid, loss in zip(uids, losses):
            if uid in position:
                self.losses[position[uid]] = loss

    def weighted_measure(self):
        """Self-normalised weights of all entries (sums to one)."""
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    def to_dict(self):
        """Snapshot as plain numpy arrays, for checkpoints."""
        return {
            "capacity": self.capacity,
            "mode": self.mode,
            "states": self.states,
            "log_weights": self.log_weights,
            "log_r": self.log_r,
            "losses": self.losses,
            "batch_ids": self.batch_ids,
            "epochs": self.epochs,
            "uids": self.uids,
            "provenance": [str(value) for value in self.provenance],
            "next_batch_id": self.next_batch_id,
            "next_uid": self.next_uid,
        }

    @classmethod
    def from_dict(cls, snapshot):
        """Rebuild a buffer saved with :meth:`to_dict`."""
        buffer = cls(snapshot["capacity"], snapshot["mode"])
        if snapshot["states"] is not None:
            buffer.states = np.array(snapshot["states"])
        buffer.log_weights = np.array(snapshot["log_weights"], dtype=np.float64)
        buffer.log_r = np.array(snapshot["log_r"], dtype=np.float64)
        buffer.losses = np.array(snapshot["losses"], dtype=np.float64)
        buffer.batch_ids = np.array(snapshot["batch_ids"], dtype=np.int64)
        buffer.epochs = np.array(snapshot["epochs"], dtype=np.int64)
        buffer.uids = np.array(snapshot["uids"], dtype=np.int64)
        buffer.provenance = np.array(snapshot["provenance"], dtype="<U16")
        buffer.next_batch_id = int(snapshot["next_batch_id"])
        buffer.next_uid = int(snapshot["next_uid"])
        return buffer

    def dump_csv(self, file_path, vocab=None):
        """
        Write one row per entry: state coordinates (or the string, for token
        states when ``vocab`` is given), log-weight, batch id and provenance.
        """
        from gfnsmc.targets.sequence import strings_from_tokens

        with open(file_path, "w", newline="") as f:
            if self.states is None or self.states.ndim == 1:
                columns = []
            elif vocab is not None:
                columns = ["string"]
            else:
                columns = [f"x{i}" for i in range(self.states.shape[1])]
            writer = csv.writer(f)
            writer.writerow(columns + ["log_weight", "batch_id", "epoch", "provenance"])
            if self.is_empty:
                return
            if vocab is not None:
                coordinates = [[s] for s in strings_from_tokens(self.states, vocab)]
            else:
                coordinates = [[repr(float(v)) for v in row] for row in self.states]
            for i in range(len(self)):
                writer.writerow(
                    coordinates[i]
                    + [
                        repr(float(self.log_weights[i])),
                        int(self.batch_ids[i]),
                        int(self.epochs[i]),
                        str(self.provenance[i]),
                    ]
                )


def insert_batch(buffer, samples, log_weights, log_r, provenance, epoch=0, losses=None):
    """Append a batch to ``buffer``; see :meth:`ReplayBuffer.insert`."""
    return buffer.insert(samples, log_weights, log_r, provenance, epoch, losses)


def draw_terminals(buffer, count, gamma, rng, mode=None):
    """Draw ``count`` states from ``buffer``; see :meth:`ReplayBuffer.draw`."""
    states, _, _ = buffer.draw(count, gamma, rng, mode)
    return states
