"""
Tests the training loops, their epoch schedule, checkpoints and resumption.
"""
import copy
import csv
import logging
import os
import shutil

import numpy as np
import pytest
import torch
from pytest import approx

from gfnsmc import log
from gfnsmc.analysis import evaluate
from gfnsmc.autodiff import DTYPE
from gfnsmc.config import TrainConfig, load_config
from gfnsmc.enumeration import enumerate_table, exact_policy_marginal, l1_distance
from gfnsmc.exceptions import CapabilityError, DegenerateWeightsError, TrainingError
from gfnsmc.io import load_checkpoint
from gfnsmc.process import DiffusionProcess, DiffusionSchedule, ExplorationPolicy, Policy
from gfnsmc.targets import PlantedMixture
from gfnsmc.tests.addons import long_running
from gfnsmc.trainer import (
    METRICS_HEADER,
    Trainer,
    checkpoint_path,
    epsilon_exploration_wrapper,
    train_combined,
    train_iw_replay,
    train_iwt,
    train_smc,
)

log.config_root_logger(verbose=True)
logger = logging.getLogger(__name__)

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "data", "configs")


@pytest.fixture(scope="function", autouse=True)
def clean_files(directory="tmp"):
    # This happens before the test function call
    if os.path.isdir(directory):
        shutil.rmtree(directory)
    os.makedirs(directory)
    yield
    # This happens after the test function call
    shutil.rmtree(directory)


def _config(**values):
    config = TrainConfig.from_profile("desk")
    config.update(
        {
            "target": {"name": "planted", "dim": 1, "z": 7.0},
            "n_steps": 8,
            "batch_size": 32,
            "hidden_policy": 16,
            "hidden_flow": 16,
            "chunk": 4,
            "buffer_capacity": 1000,
            "n_epoch": 4,
            "log_every": 1,
            "checkpoint_every": 0,
        }
    )
    config.update(values)
    return config.validate()


def _sequence_config(**values):
    config = _config(target={"name": "sequence", "vocab": "AB", "length": 4}, chunk=2)
    config.update(values)
    return config.validate()


def _nan_reward(x):
    return torch.full((len(x),), np.nan, dtype=DTYPE)


def _parameters(trainer):
    return [p.detach().clone() for p in trainer.policy.parameters()] + [
        p.detach().clone() for p in trainer.flow.parameters()
    ]


@pytest.mark.parametrize("algo", ["iwt", "smc", "replay", "combined"])
def test_training_is_deterministic(algo):
    first = Trainer(_config(algo=algo))
    second = Trainer(_config(algo=algo))
    first.train(3)
    second.train(3)
    assert [r.loss_tb for r in first.records] == [r.loss_tb for r in second.records]
    assert [r.mode for r in first.records] == [r.mode for r in second.records]
    for a, b in zip(_parameters(first), _parameters(second)):
        assert torch.equal(a, b)


def test_epoch_schedule():
    modes = {
        "iwt": ["iw", "on_policy", "iw", "on_policy"],
        "smc": ["smc", "on_policy", "smc", "on_policy"],
        "replay": ["on_policy", "on_policy", "replay", "on_policy"],
        "combined": ["replay", "on_policy", "replay", "on_policy"],
    }
    for algo, expected in modes.items():
        trainer = Trainer(_config(algo=algo))
        trainer.train()
        assert [r.mode for r in trainer.records] == expected, algo
        assert [r.epoch for r in trainer.records] == [1, 2, 3, 4]

    trainer = Trainer(_config(algo="combined", off_policy_ratio=1))
    trainer.train(3)
    assert [r.mode for r in trainer.records] == ["on_policy"] * 3


def test_record_fields():
    trainer = Trainer(_config(algo="smc"))
    smc, on_policy = trainer.train(2)
    assert smc.loss_subtb is not None
    assert 1.0 <= smc.ess_min <= smc.ess_mean <= 32.0
    assert 0.0 <= smc.lambda_star <= 1.0
    assert np.isfinite(smc.log_z_hat)
    assert on_policy.lambda_star is None
    assert on_policy.log_z_theta == float(trainer.policy.log_z.detach())

    trainer = Trainer(_config(algo="iwt"))
    weighted, _ = trainer.train(2)
    assert weighted.loss_subtb is None
    assert 0.0 <= weighted.lambda_star <= 1.0


def test_optimiser_groups():
    assert Trainer(_config(algo="iwt")).optimiser.group_names == ["policy", "log_z"]
    assert Trainer(_config(algo="combined")).optimiser.group_names == [
        "policy",
        "log_z",
        "flow",
        "schedule",
    ]
    frozen = Trainer(_config(algo="smc", learn_schedule=False))
    assert frozen.optimiser.group_names == ["policy", "log_z", "flow"]


def test_replay_epoch_makes_no_forward_rollouts():
    trainer = Trainer(_config(algo="replay"))
    trainer.train(2)
    assert trainer.forward_rollouts == 2
    assert len(trainer.buffer) == 64
    record = trainer.run_epoch()
    assert record.mode == "replay"
    assert trainer.forward_rollouts == 2
    assert np.sum(np.isfinite(trainer.buffer.losses)) >= 32


def test_first_combined_epoch_inserts_smc_particles():
    trainer = Trainer(_config(algo="combined"))
    record = trainer.run_epoch()
    assert record.mode == "replay"
    assert trainer.forward_rollouts == 0
    assert trainer.buffer.n_batches == 1
    assert len(trainer.buffer) == 32
    assert set(trainer.buffer.provenance.tolist()) == {"smc"}
    trainer.run_epoch()
    assert trainer.buffer.n_batches == 2
    assert trainer.buffer.provenance.tolist()[-1] == "on_policy"


def test_resume_matches_uninterrupted_run(clean_files):
    config = _config(algo="combined", n_epoch=5)
    straight = Trainer(config)
    straight.train()

    first = Trainer(config)
    first.train(2)
    path = os.path.join("tmp", "checkpoint.json")
    first.save(path)
    resumed = Trainer.from_checkpoint(load_checkpoint(path))
    assert resumed.epoch == 2
    resumed.train()
    assert [r.epoch for r in resumed.records] == [3, 4, 5]
    for a, b in zip(straight.records[2:], resumed.records):
        assert a.mode == b.mode
        assert a.loss_tb == b.loss_tb
        assert a.loss_subtb == b.loss_subtb
        assert a.log_z_hat == b.log_z_hat
    for a, b in zip(_parameters(straight), _parameters(resumed)):
        assert torch.equal(a, b)


def test_resume_replay_from_buffer(clean_files):
    config = _config(algo="replay", n_epoch=3)
    straight = Trainer(config)
    straight.train()
    first = Trainer(config)
    first.train(2)
    path = os.path.join("tmp", "checkpoint.json")
    first.save(path)
    resumed = Trainer.from_checkpoint(load_checkpoint(path))
    record = resumed.run_epoch()
    assert record.mode == "replay"
    assert record.loss_tb == straight.records[-1].loss_tb


def test_output_files(clean_files):
    out_dir = os.path.join("tmp", "run")
    trainer = Trainer(_config(algo="smc", checkpoint_every=2))
    trainer.train(3, out_dir=out_dir)
    assert os.path.isfile(checkpoint_path(out_dir, 2))
    assert os.path.isfile(checkpoint_path(out_dir, 3))
    assert not os.path.isfile(checkpoint_path(out_dir, 1))
    with open(os.path.join(out_dir, "metrics.csv"), "r", newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == METRICS_HEADER
    assert [row[0] for row in rows[1:]] == ["1", "2", "3"]
    assert [row[1] for row in rows[1:]] == ["smc", "on_policy", "smc"]
    assert all(row[-1] == "" for row in rows[1:])
    assert float(rows[1][2]) == trainer.records[0].loss_tb

    resumed = Trainer.from_checkpoint(load_checkpoint(checkpoint_path(out_dir, 3)))
    resumed.train(5, out_dir=out_dir)
    with open(os.path.join(out_dir, "metrics.csv"), "r", newline="") as f:
        rows = list(csv.reader(f))
    assert [row[0] for row in rows[1:]] == ["1", "2", "3", "4", "5"]
    assert os.path.isfile(checkpoint_path(out_dir, 5))


def test_wall_time_column(clean_files):
    out_dir = os.path.join("tmp", "run")
    Trainer(_config(algo="iwt", log_wall_time=True)).train(1, out_dir=out_dir)
    with open(os.path.join(out_dir, "metrics.csv"), "r", newline="") as f:
        rows = list(csv.reader(f))
    assert float(rows[1][-1]) >= 0.0


def test_nan_reward_in_replay_epoch(monkeypatch):
    trainer = Trainer(_config(algo="replay"))
    trainer.train(2)
    monkeypatch.setattr(trainer.process, "log_reward", _nan_reward)
    with pytest.raises(TrainingError, match="non-finite rewards"):
        trainer.run_epoch()


def test_nan_reward_in_on_policy_epoch(monkeypatch):
    trainer = Trainer(_config(algo="iwt"))
    monkeypatch.setattr(trainer.process, "log_reward", _nan_reward)
    with pytest.raises(DegenerateWeightsError):
        trainer.run_epoch()


def test_epsilon_exploration_wrapper():
    trainer = Trainer(_sequence_config())
    behaviour = epsilon_exploration_wrapper(trainer.policy, 0.2, trainer.process)
    assert isinstance(behaviour, ExplorationPolicy)
    assert behaviour.epsilon == 0.2
    process = DiffusionProcess(PlantedMixture(), DiffusionSchedule(4))
    with pytest.raises(CapabilityError):
        epsilon_exploration_wrapper(Policy(2, 1), 0.1, process)


def test_sequence_training():
    trainer = Trainer(_sequence_config(algo="combined", epsilon=0.1, eval_every=2, eval_samples=16))
    trainer.train(4)
    assert trainer.buffer.states.dtype == np.int64
    assert trainer.buffer.states.shape[1] == 4
    assert len(trainer.evaluations) == 2
    assert trainer.evaluations[0].l1 is not None
    summary = trainer.final_metrics()
    assert set(summary) == {"elbo", "eubo", "log_z_hat", "l1"}
    assert summary["l1"] == approx(np.mean([r.l1 for r in trainer.evaluations]))


@pytest.mark.parametrize(
    "values",
    [
        {"loss_policy": "lv"},
        {"loss_flow": "subtb_lambda"},
        {"priority": "loss"},
        {"priority": "reward"},
        {"resampling": "systematic"},
        {"learn_correction": False},
    ],
)
def test_loss_and_priority_variants(values):
    trainer = Trainer(_config(algo="combined", **values))
    records = trainer.train(3)
    assert all(np.isfinite(r.loss_tb) for r in records)


def test_unweighted_loss_in_iw_epochs_is_reported(caplog):
    with caplog.at_level(logging.WARNING, logger="gfnsmc.trainer"):
        Trainer(_config(algo="iwt", loss_policy="lv"))
    assert "log-variance loss is unweighted" in caplog.text

    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="gfnsmc.trainer"):
        Trainer(_config(algo="iwt"))
        Trainer(_config(algo="combined", loss_policy="lv"))
    assert "unweighted" not in caplog.text


def test_train_functions_return_trainers():
    config = _config(n_epoch=2)
    for function, algo in (
        (train_iwt, "iwt"),
        (train_smc, "smc"),
        (train_iw_replay, "replay"),
        (train_combined, "combined"),
    ):
        trainer = function(config)
        assert isinstance(trainer, Trainer)
        assert trainer.config.algo == algo
        assert trainer.epoch == 2
    assert config.algo == "combined"


def test_explicit_target_overrides_config():
    target = PlantedMixture(dim=1, z=3.0)
    trainer = Trainer(_config(), target)
    assert trainer.target is target
    assert trainer.process.target.exact_log_z == approx(np.log(3.0))


@long_running
def test_discrete_normaliser_is_learnt():
    config = load_config(os.path.join(CONFIG_DIR, "desk_discrete4.json"))
    trainer = train_iw_replay(config)
    assert np.exp(trainer.records[-1].log_z_theta) == approx(81.0, rel=0.02)
    table = enumerate_table(trainer.target)
    marginal = exact_policy_marginal(table, trainer.policy, trainer.process)
    assert l1_distance(marginal, table) <= 0.05


@long_running
def test_planted_normaliser_is_learnt():
    config = load_config(os.path.join(CONFIG_DIR, "planted.json"))
    trainer = train_combined(config)
    assert trainer.records[-1].log_z_theta == approx(np.log(7.0), abs=0.05)


def _gmm40_config(**values):
    config = load_config(os.path.join(CONFIG_DIR, "desk_gmm2.json"))
    config.update({"eval_every": 0, "checkpoint_every": 0, "log_every": 100})
    config.update(values)
    return config.validate()


@pytest.fixture(scope="module")
def gmm40_runs():
    on_policy = Trainer(_gmm40_config(algo="iwt", off_policy_ratio=1))
    on_policy.train()
    combined = train_combined(_gmm40_config())
    return on_policy, combined


@long_running
def test_combined_training_covers_gmm40_modes(gmm40_runs):
    on_policy, combined = gmm40_runs
    metrics = ["eubo", "modes"]
    collapsed = evaluate(on_policy.process, on_policy.policy, metrics, 2000, seed=1)
    covered = evaluate(combined.process, combined.policy, metrics, 2000, seed=1)
    assert collapsed.eubo > 50.0
    assert collapsed.mode_count < 15
    assert covered.eubo < 5.0
    assert covered.mode_count >= 35


@long_running
def test_tempering_exponent_rises_during_combined_training(gmm40_runs):
    _, combined = gmm40_runs
    n_epoch = len(combined.records)
    cut = n_epoch // 5
    early = [r.lambda_star for r in combined.records[:cut] if r.lambda_star is not None]
    late = [r.lambda_star for r in combined.records[-cut:] if r.lambda_star is not None]
    assert early and late
    assert np.mean(late) >= np.mean(early)


def _collapses(learnt, seed):
    config = _gmm40_config(
        algo="smc",
        n_epoch=500,
        seed=seed,
        learn_schedule=learnt,
        learn_correction=learnt,
    )
    trainer = Trainer(config)
    trainer.train()
    return any(r.ess_min is not None and r.ess_min < 2.0 for r in trainer.records)


@long_running
def test_fixed_schedule_smc_degenerates():
    seeds = range(5)
    linear = sum(_collapses(False, seed) for seed in seeds)
    learnt = sum(_collapses(True, seed) for seed in seeds)
    assert linear >= 3
    assert learnt < 3
