"""
Training loops.

Four algorithms share one :class:`Trainer`:

* ``iwt``: on-policy rollouts, every ``I``-th epoch with uniform weights and
  otherwise with adaptively tempered importance weights;
* ``smc``: off-policy epochs train on backward trajectories from SMC particles;
* ``replay``: on-policy epochs fill an importance-weighted replay buffer,
  off-policy epochs train on backward trajectories from buffer draws;
* ``combined``: SMC particles are inserted into the buffer and the batch is
  drawn from the whole buffer.

The policy (and :math:`\\log Z_\\theta`) is trained by trajectory balance
only; the flows are trained by subtrajectory balance with the policy terms
detached.
"""
import copy
import csv
import logging
import os
import time

import numpy as np
import torch

from gfnsmc.analysis import evaluate, moving_average
from gfnsmc.autodiff import DTYPE, Optimiser
from gfnsmc.buffer import ReplayBuffer, batch_z_ais
from gfnsmc.config import TrainConfig
from gfnsmc.exceptions import CapabilityError, TrainingError
from gfnsmc.io import Checkpoint, load_module_arrays, module_arrays, save_checkpoint
from gfnsmc.objectives import (
    flow_table,
    lv_loss,
    subtb_chunk_loss,
    subtb_lambda_loss,
    tb_loss,
    weighted_batch_loss,
)
from gfnsmc.process import (
    ExplorationPolicy,
    Provenance,
    make_flow,
    make_policy,
    make_process,
)
from gfnsmc.smc import adaptive_iw_tempering, ess, smc_sampling, temper
from gfnsmc.targets import make_target
from gfnsmc.utils import RandomStreams, make_run_dir, normalise_log_weights

logger = logging.getLogger(__name__)

METRICS_HEADER = (
    "epoch",
    "mode",
    "loss_tb",
    "loss_subtb",
    "lambda_star",
    "ess_mean",
    "log_z_hat",
    "log_z_theta",
    "wall_ms",
)


class EpochRecord(object):
    """
    Summary of one training epoch, one row of ``metrics.csv``.

    ``mode`` is ``on_policy``, ``iw`` (tempered on-policy weights), ``smc`` or
    ``replay``. Fields that do not apply to the epoch are ``None`` and written
    as empty cells. ``ess_min`` (the smallest per-segment ESS of an SMC epoch)
    is kept in memory only.
    """

    def __init__(self, epoch, mode):
        self.epoch = int(epoch)
        self.mode = mode
        self.loss_tb = None
        self.loss_subtb = None
        self.lambda_star = None
        self.ess_mean = None
        self.ess_min = None
        self.log_z_hat = None
        self.log_z_theta = None
        self.wall_ms = None

    def to_row(self, log_wall_time=False):
        """Dictionary for :class:`csv.DictWriter`, with floats written exactly."""
        row = {}
        for name in METRICS_HEADER:
            value = getattr(self, name)
            if name == "wall_ms" and not log_wall_time:
                value = None
            if value is None:
                row[name] = ""
            elif isinstance(value, float):
                row[name] = repr(value)
            else:
                row[name] = value
        return row

    def __repr__(self):
        return f"EpochRecord(epoch={self.epoch}, mode={self.mode!r}, loss_tb={self.loss_tb})"


class MetricsLog(object):
    """Streams :class:`EpochRecord` rows to a CSV file with a fixed header."""

    def __init__(self, file_path, append=False, log_wall_time=False):
        self.file_path = file_path
        self.log_wall_time = log_wall_time
        exists = append and os.path.isfile(file_path)
        self._file = open(file_path, "a" if exists else "w", newline="")
        self._writer = csv.DictWriter(self._file, fieldnames=METRICS_HEADER)
        if not exists:
            self._writer.writeheader()

    def write(self, record):
        self._writer.writerow(record.to_row(self.log_wall_time))
        self._file.flush()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def epsilon_exploration_wrapper(policy, epsilon, process):
    """
    Behaviour policy that takes a uniformly random action with probability
    ``epsilon`` at every step.

    Raises
    ------
    CapabilityError
        For continuous processes.
    """
    if not process.is_discrete:
        raise CapabilityError("Epsilon exploration is only defined for discrete processes.")
    return ExplorationPolicy(policy, epsilon)


class Trainer(object):
    """
    Owns the sampler, the optimiser, the replay buffer and the epoch counter
    of one training run.

    Parameters
    ----------
    config : TrainConfig
    target : Target, optional
        Built from ``config.target`` when omitted.
    """

    def __init__(self, config, target=None):
        self._config = config.validate()
        self._target = make_target(config.target) if target is None else target
        self._process = make_process(config, self._target)
        init = RandomStreams(config.seed, 0)
        self._policy = make_policy(config, self._process, init.torch("init.policy"))
        self._flow = make_flow(config, self._process, init.torch("init.flow"))
        groups = dict(self._policy.named_groups())
        if self.uses_flow:
            groups.update(self._flow.named_groups())
        self._optimiser = Optimiser(groups, config.learning_rates, config.grad_clip)
        self._buffer = None
        if self.uses_buffer:
            self._buffer = ReplayBuffer(config.buffer_capacity, config.priority)
        self._behaviour = self._policy
        if config.epsilon > 0:
            self._behaviour = epsilon_exploration_wrapper(
                self._policy, config.epsilon, self._process
            )
        if config.algo == "iwt" and config.loss_policy == "lv":
            logger.warning(
                "The log-variance loss is unweighted; the tempered importance "
                "weights of iw epochs are not applied."
            )
        self._epoch = 0
        self.records = []
        self.evaluations = []
        self.forward_rollouts = 0

    @property
    def config(self):
        """TrainConfig: Settings of the run."""
        return self._config

    @property
    def target(self):
        return self._target

    @property
    def process(self):
        """GenerativeProcess: The sampler's process."""
        return self._process

    @property
    def policy(self):
        """Policy: The forward policy and :math:`\\log Z_\\theta`."""
        return self._policy

    @property
    def flow(self):
        """FlowModel: The learnt intermediate flows."""
        return self._flow

    @property
    def optimiser(self):
        return self._optimiser

    @property
    def buffer(self):
        """ReplayBuffer or None: The replay buffer of the ``replay`` and ``combined`` loops."""
        return self._buffer

    @property
    def epoch(self) -> int:
        """int: Number of completed epochs."""
        return self._epoch

    @property
    def uses_flow(self) -> bool:
        return self.config.algo in ("smc", "combined")

    @property
    def uses_buffer(self) -> bool:
        return self.config.algo in ("replay", "combined")

    def is_on_policy(self, epoch):
        """Epoch ``epoch`` (counted from 1) is on-policy when ``epoch % I == 0``."""
        return epoch % self.config.off_policy_ratio == 0

    def _rollout(self, generator):
        self.forward_rollouts += 1
        return self.process.rollout(
            self._behaviour, self.config.batch_size, generator, Provenance.ON_POLICY
        )

    def _backward(self, terminal, generator, provenance):
        return self.process.backward_trajectories(
            self.policy, terminal, generator, provenance
        )

    def _optimise(self, batch, weights, record):
        """One gradient step on ``batch``; returns the per-trajectory policy losses."""
        config = self.config
        log_fwd = self.process.score_forward(self.policy, batch.states)
        if config.loss_policy == "tb":
            per_trajectory = tb_loss(
                batch, self.policy, log_fwd, log_ratio_clip=config.log_ratio_clip
            )
            policy_report = weighted_batch_loss(per_trajectory, weights, "policy")
        else:
            log_weights = (
                batch.log_r + batch.log_back.sum(-1) - batch.log_p0 - log_fwd.sum(-1)
            )
            policy_report = lv_loss(log_weights)
            per_trajectory = policy_report.contributions
        total = policy_report.value
        record.loss_tb = float(policy_report)

        if self.uses_flow:
            log_z = self.policy.log_z.detach()
            detached = log_fwd.detach()
            if config.loss_flow == "subtb_chunk":
                steps = range(0, batch.n_steps + 1, config.chunk)
                table = flow_table(self.flow, self.process, batch, steps, log_z)
                per_flow = subtb_chunk_loss(
                    table, detached, batch.log_back, config.chunk, config.log_ratio_clip
                )
            else:
                table = flow_table(
                    self.flow, self.process, batch, range(batch.n_steps + 1), log_z
                )
                per_flow = subtb_lambda_loss(
                    table, detached, batch.log_back, config.subtb_lambda
                )
            flow_report = weighted_batch_loss(per_flow, weights, "flow")
            total = total + flow_report.value
            record.loss_subtb = float(flow_report)

        if not torch.isfinite(total):
            raise TrainingError(
                f"Non-finite loss at epoch {record.epoch} ({record.mode}): "
                f"policy loss {record.loss_tb}, flow loss {record.loss_subtb}, "
                f"log Z_theta {float(self.policy.log_z.detach())}, "
                f"{int((~torch.isfinite(batch.log_r)).sum())} non-finite rewards."
            )
        self.optimiser.zero_grad()
        total.backward()
        self.optimiser.step()
        return per_trajectory.detach().numpy()

    def _on_policy_epoch(self, streams, record, weighted=False):
        batch = self._rollout(streams.torch("rollout"))
        log_w = batch.log_weights
        record.ess_mean = ess(log_w)
        record.log_z_hat = batch_z_ais(log_w)
        weights = None
        if weighted:
            lam = adaptive_iw_tempering(log_w, self.config.gamma)
            weights = torch.as_tensor(
                np.exp(normalise_log_weights(temper(log_w, lam))), dtype=DTYPE
            )
            record.lambda_star = lam
        losses = self._optimise(batch, weights, record)
        if self.uses_buffer:
            self.buffer.insert(
                self.process.to_numpy(batch.terminal),
                log_w.numpy(),
                batch.log_r.numpy(),
                Provenance.ON_POLICY.value,
                record.epoch,
                losses,
            )
        return record

    def _smc(self, streams, record):
        config = self.config
        system = smc_sampling(
            self.process,
            self.policy,
            self.flow,
            config.batch_size,
            config.chunk,
            config.kappa,
            config.gamma,
            streams.torch("smc"),
            config.resampling,
        )
        record.ess_mean = float(np.mean(system.ess_history))
        record.ess_min = float(np.min(system.ess_history))
        record.log_z_hat = float(system.log_z_hat)
        record.lambda_star = system.mean_lambda
        return system

    def _draw(self, streams, record):
        gamma = self.config.gamma
        rng = streams.numpy("buffer")
        try:
            states, uids, lam = self.buffer.draw(self.config.batch_size, gamma, rng)
        except CapabilityError:
            logger.info(f"Epoch {record.epoch}: no cached losses yet, drawing uniformly.")
            states, uids, lam = self.buffer.draw(
                self.config.batch_size, gamma, rng, mode="uniform"
            )
        if lam is not None:
            record.lambda_star = lam
        return self.process.from_numpy(states), uids

    def _smc_epoch(self, streams, record):
        system = self._smc(streams, record)
        batch = self._backward(system.particles, streams.torch("backward"), Provenance.SMC)
        self._optimise(batch, None, record)
        return record

    def _replay_epoch(self, streams, record):
        if self.buffer.is_empty:
            logger.warning(f"Epoch {record.epoch}: the buffer is empty, training on-policy.")
            record.mode = "on_policy"
            return self._on_policy_epoch(streams, record)
        terminal, uids = self._draw(streams, record)
        batch = self._backward(terminal, streams.torch("backward"), Provenance.BUFFER)
        losses = self._optimise(batch, None, record)
        self.buffer.update_losses(uids, losses)
        return record

    def _combined_epoch(self, streams, record):
        system = self._smc(streams, record)
        particles = self.process.to_numpy(system.particles)
        self.buffer.insert(
            particles,
            system.log_weights.numpy(),
            self.process.log_reward(system.particles).numpy(),
            Provenance.SMC.value,
            record.epoch,
        )
        terminal, uids = self._draw(streams, record)
        batch = self._backward(terminal, streams.torch("backward"), Provenance.BUFFER)
        losses = self._optimise(batch, None, record)
        self.buffer.update_losses(uids, losses)
        return record

    def run_epoch(self):
        """
        Run the next epoch.

        Returns
        -------
        EpochRecord
        """
        epoch = self._epoch + 1
        streams = RandomStreams(self.config.seed, epoch)
        start = time.perf_counter()
        algo = self.config.algo
        if self.is_on_policy(epoch):
            record = self._on_policy_epoch(streams, EpochRecord(epoch, "on_policy"))
        elif algo == "iwt":
            record = self._on_policy_epoch(streams, EpochRecord(epoch, "iw"), weighted=True)
        elif algo == "smc":
            record = self._smc_epoch(streams, EpochRecord(epoch, "smc"))
        elif algo == "replay":
            record = self._replay_epoch(streams, EpochRecord(epoch, "replay"))
        else:
            record = self._combined_epoch(streams, EpochRecord(epoch, "replay"))
        record.log_z_theta = float(self.policy.log_z.detach())
        record.wall_ms = 1000.0 * (time.perf_counter() - start)
        self._epoch = epoch
        self.records.append(record)
        return record

    def evaluation_metrics(self):
        """Metrics evaluated periodically, depending on what the target supports."""
        metrics = ["elbo"]
        if self.target.has_sampler:
            metrics.append("eubo")
        if hasattr(self.target, "means"):
            metrics.append("modes")
        if self.target.is_discrete:
            metrics.append("l1")
        return metrics

    def evaluate(self, count=None):
        """Evaluate the current policy; see :func:`gfnsmc.analysis.evaluate`."""
        count = self.config.eval_samples if count is None else count
        report = evaluate(
            self.process,
            self.policy,
            self.evaluation_metrics(),
            count,
            self.config.seed,
            self.epoch,
        )
        self.evaluations.append(report)
        return report

    def final_metrics(self):
        """Moving averages of the periodic evaluations, taken at the last one."""
        summary = {}
        if not self.evaluations:
            return summary
        for field in ("elbo", "eubo", "log_z_hat", "mode_count", "l1"):
            values = [getattr(r, field) for r in self.evaluations]
            if any(v is None for v in values):
                continue
            summary[field] = float(moving_average(values)[-1])
        return summary

    def train(self, n_epoch=None, out_dir=None):
        """
        Train until ``n_epoch`` epochs have completed in total.

        Parameters
        ----------
        n_epoch : int, optional
            Defaults to ``config.n_epoch``.
        out_dir : os.PathLike, optional
            Directory for ``metrics.csv`` and checkpoints; nothing is written
            when omitted.

        Returns
        -------
        list of EpochRecord
            Records of the epochs run by this call.
        """
        config = self.config
        n_epoch = config.n_epoch if n_epoch is None else int(n_epoch)
        metrics = None
        if out_dir is not None:
            make_run_dir(out_dir)
            metrics = MetricsLog(
                os.path.join(out_dir, "metrics.csv"),
                append=self.epoch > 0,
                log_wall_time=config.log_wall_time,
            )
        logger.info(
            f"Training {config.algo} on {self.target.name} from epoch {self.epoch + 1} "
            f"to {n_epoch} (K = {config.batch_size}, N = {self.process.n_steps})"
        )
        new_records = []
        try:
            while self.epoch < n_epoch:
                record = self.run_epoch()
                new_records.append(record)
                if metrics is not None:
                    metrics.write(record)
                if record.epoch % config.log_every == 0:
                    logger.info(
                        f"Epoch {record.epoch:6d} {record.mode:9s} "
                        f"loss {record.loss_tb:.4g} log Z_theta {record.log_z_theta:.4f}"
                    )
                if config.eval_every and record.epoch % config.eval_every == 0:
                    self.evaluate()
                if (
                    out_dir is not None
                    and config.checkpoint_every
                    and record.epoch % config.checkpoint_every == 0
                ):
                    self.save(checkpoint_path(out_dir, record.epoch))
        finally:
            if metrics is not None:
                metrics.close()
        if out_dir is not None and new_records:
            self.save(checkpoint_path(out_dir, self.epoch))
        summary = self.final_metrics()
        if summary:
            logger.info(f"Final moving averages: {summary}")
        return new_records

    def checkpoint(self):
        """The current state as a :class:`~gfnsmc.io.Checkpoint`."""
        return Checkpoint(
            self.config.to_dict(),
            self.epoch,
            {"policy": module_arrays(self.policy), "flow": module_arrays(self.flow)},
            self.optimiser.state_dict(),
            {"seed": self.config.seed, "epoch": self.epoch},
            None if self.buffer is None else self.buffer.to_dict(),
        )

    def save(self, file_path):
        save_checkpoint(file_path, self.checkpoint())

    @classmethod
    def from_checkpoint(cls, checkpoint):
        """Rebuild a trainer so that training resumes exactly where it stopped."""
        trainer = cls(TrainConfig.from_dict(checkpoint.config))
        load_module_arrays(trainer.policy, checkpoint.parameters["policy"])
        load_module_arrays(trainer.flow, checkpoint.parameters["flow"])
        trainer.optimiser.load_state_dict(checkpoint.optimiser)
        if checkpoint.buffer is not None and trainer.buffer is not None:
            trainer._buffer = ReplayBuffer.from_dict(checkpoint.buffer)
        trainer._epoch = checkpoint.epoch
        return trainer


def checkpoint_path(out_dir, epoch):
    return os.path.join(out_dir, f"checkpoint_{epoch:06d}.json")


def _train(algo, config, target=None, out_dir=None):
    config = copy.deepcopy(config)
    config.algo = algo
    trainer = Trainer(config, target)
    trainer.train(out_dir=out_dir)
    return trainer


def train_iwt(config, target=None, out_dir=None):
    """Importance-weighted training; returns the finished :class:`Trainer`."""
    return _train("iwt", config, target, out_dir)


def train_smc(config, target=None, out_dir=None):
    """Training with SMC; returns the finished :class:`Trainer`."""
    return _train("smc", config, target, out_dir)


def train_iw_replay(config, target=None, out_dir=None):
    """Training with importance-weighted replay; returns the finished :class:`Trainer`."""
    return _train("replay", config, target, out_dir)


def train_combined(config, target=None, out_dir=None):
    """Training with SMC and importance-weighted replay; returns the finished :class:`Trainer`."""
    return _train("combined", config, target, out_dir)
