"""
Tests the importance-weighted replay buffer and the batch normalising-constant
estimates.
"""
import logging
import os

import numpy as np
import pytest
import torch
from pytest import approx

from gfnsmc import log
from gfnsmc.autodiff import DTYPE
from gfnsmc.buffer import (
    LOSS_PRIORITY_EPSILON,
    ReplayBuffer,
    SegmentRecord,
    batch_z_ais,
    batch_z_smc,
    draw_terminals,
    insert_batch,
)
from gfnsmc.enumeration import enumerate_table
from gfnsmc.exceptions import CapabilityError, ConfigError, ContractError, InputError
from gfnsmc.process import Policy, PrependAppendProcess
from gfnsmc.smc import ess, temper
from gfnsmc.targets import SequenceReward, strings_from_tokens

log.config_root_logger(verbose=True)
logger = logging.getLogger(__name__)


def _points(count, start=0.0):
    return np.arange(start, start + 2 * count, dtype=np.float64).reshape(count, 2)


def _filled(sizes, capacity=100, mode="iw"):
    buffer = ReplayBuffer(capacity, mode)
    for i, size in enumerate(sizes):
        buffer.insert(_points(size, 100.0 * i), np.zeros(size), np.zeros(size), "smc", i + 1)
    return buffer


def test_batch_z_ais():
    assert batch_z_ais(np.array([0.0, np.log(3.0)])) == approx(np.log(2.0))
    assert batch_z_ais(torch.full((5,), 1.5, dtype=DTYPE)) == approx(1.5)
    with pytest.raises(ContractError):
        batch_z_ais(np.zeros(0))


def test_batch_z_smc():
    half = np.log([0.5, 0.5])
    records = [SegmentRecord(half, np.log([2.0, 4.0]))]
    assert batch_z_smc(records) == approx(np.log(3.0))
    records.append(SegmentRecord(np.log([0.25, 0.75]), np.log([4.0, 8.0])))
    assert batch_z_smc(records) == approx(np.log(3.0) + np.log(7.0))
    assert batch_z_smc([]) == 0.0


def test_insert_keeps_weights_bit_exact():
    buffer = ReplayBuffer(10)
    log_w = np.array([0.1, -2.0 / 3.0, 1e-300, 123.456789])
    batch_id = buffer.insert(_points(4), log_w, np.ones(4), "on_policy", epoch=3)
    assert batch_id == 0
    for i in range(4):
        entry = buffer.entry(i)
        assert entry.log_weight == log_w[i]
        assert entry.epoch == 3
        assert entry.provenance == "on_policy"
        assert np.isnan(entry.loss)
    assert np.array_equal(buffer.states, _points(4))


def test_eviction_removes_whole_batches():
    buffer = _filled([4, 4, 4], capacity=10)
    assert len(buffer) == 8
    assert buffer.n_batches == 2
    assert buffer.batch_ids.tolist() == [1] * 4 + [2] * 4
    assert buffer.uids.tolist() == list(range(4, 12))
    assert buffer.epochs.tolist() == [2] * 4 + [3] * 4


def test_insert_errors():
    buffer = ReplayBuffer(4)
    with pytest.raises(ConfigError):
        buffer.insert(_points(5), np.zeros(5), np.zeros(5), "smc")
    with pytest.raises(InputError):
        buffer.insert(_points(3), np.zeros(2), np.zeros(2), "smc")
    with pytest.raises(ConfigError):
        ReplayBuffer(0)
    with pytest.raises(ConfigError):
        ReplayBuffer(4, "fifo")
    assert buffer.is_empty


def test_insert_drops_non_finite_weights():
    buffer = ReplayBuffer(10)
    buffer.insert(_points(4), np.array([0.0, np.nan, -np.inf, 1.0]), np.zeros(4), "smc")
    assert len(buffer) == 2
    assert buffer.log_weights.tolist() == [0.0, 1.0]
    assert np.array_equal(buffer.states, _points(4)[[0, 3]])


def test_draw_single_entry():
    buffer = ReplayBuffer(5)
    insert_batch(buffer, _points(1), np.array([-3.0]), np.zeros(1), "smc")
    states, uids, lam = buffer.draw(6, 0.5, np.random.default_rng(0))
    assert uids.tolist() == [0] * 6
    assert np.array_equal(states, np.repeat(_points(1), 6, axis=0))
    assert lam == 1.0
    assert draw_terminals(buffer, 2, 0.5, np.random.default_rng(0)).shape == (2, 2)


def test_draw_follows_importance_weights():
    buffer = ReplayBuffer(5)
    buffer.insert(_points(2), np.log([1.0, 3.0]), np.zeros(2), "smc")
    count = 20000
    _, uids, lam = buffer.draw(count, 0.0, np.random.default_rng(1))
    assert lam == 1.0
    fraction = np.mean(uids == 1)
    error = np.sqrt(0.75 * 0.25 / count)
    assert abs(fraction - 0.75) < 4 * error


def test_equal_weights_draw_uniformly():
    buffer = _filled([3, 5])
    _, iw_uids, _ = buffer.draw(50, 0.9, np.random.default_rng(2))
    _, uniform_uids, lam = buffer.draw(50, 0.9, np.random.default_rng(2), mode="uniform")
    assert lam is None
    assert np.array_equal(iw_uids, uniform_uids)


def test_tempered_draw_keeps_ess_above_threshold():
    rng = np.random.default_rng(4)
    buffer = ReplayBuffer(200)
    buffer.insert(rng.normal(size=(200, 2)), 5 * rng.normal(size=200), np.zeros(200), "smc")
    gamma = 0.5
    _, _, lam = buffer.draw(10, gamma, np.random.default_rng(0))
    assert 0.0 <= lam < 1.0
    assert ess(temper(buffer.log_weights, lam)) >= gamma * len(buffer)
    assert buffer.last_lambda == lam


def test_reward_mode_uses_log_rewards():
    buffer = ReplayBuffer(5, mode="reward")
    buffer.insert(_points(2), np.zeros(2), np.log([1.0, 3.0]), "smc")
    log_priorities, lam = buffer.priorities(0.0)
    assert lam == 1.0
    assert log_priorities == approx(np.log([1.0, 3.0]))


def test_loss_mode_priorities():
    buffer = _filled([4], mode="loss")
    with pytest.raises(CapabilityError):
        buffer.draw(2, 0.5, np.random.default_rng(0))
    buffer.update_losses([0, 2, 99], [1.0, 3.0, 5.0])
    log_priorities, lam = buffer.priorities(0.5)
    assert lam is None
    expected = np.log(np.array([1.0, 3.0, 3.0, 3.0]) + LOSS_PRIORITY_EPSILON)
    assert log_priorities == approx(expected)
    _, uids, _ = buffer.draw(3, 0.5, np.random.default_rng(0))
    assert set(uids.tolist()) <= {0, 1, 2, 3}


def test_draw_from_empty_buffer():
    with pytest.raises(ContractError):
        ReplayBuffer(3).draw(1, 0.5, np.random.default_rng(0))


def test_snapshot_round_trip():
    buffer = _filled([3, 2], capacity=6)
    buffer.update_losses([1], [0.5])
    clone = ReplayBuffer.from_dict(buffer.to_dict())
    for name in ("states", "log_weights", "log_r", "batch_ids", "epochs", "uids", "provenance"):
        assert np.array_equal(getattr(clone, name), getattr(buffer, name))
    assert np.array_equal(clone.losses, buffer.losses, equal_nan=True)
    assert clone.insert(_points(1), np.zeros(1), np.zeros(1), "smc") == 2
    assert clone.uids[-1] == 5
    assert len(clone) == 6


def test_dump_csv(tmp_path):
    buffer = _filled([2, 3])
    file_path = os.path.join(tmp_path, "buffer.csv")
    buffer.dump_csv(file_path)
    with open(file_path, "r") as f:
        lines = f.read().splitlines()
    assert lines[0] == "x0,x1,log_weight,batch_id,epoch,provenance"
    assert len(lines) == 6
    assert lines[-1].endswith(",1,2,smc")

    sequences = ReplayBuffer(4)
    sequences.insert(np.array([[0, 1, 1], [1, 0, -1]]), np.zeros(2), np.zeros(2), "on_policy")
    sequences.dump_csv(file_path, vocab="AB")
    with open(file_path, "r") as f:
        lines = f.read().splitlines()
    assert lines[0] == "string,log_weight,batch_id,epoch,provenance"
    assert lines[1].startswith("ABB,")
    assert lines[2].startswith("BA,")


def test_weighted_measure_approximates_target():
    target = SequenceReward("AB", 3)
    table = enumerate_table(target)
    process = PrependAppendProcess(target)
    policy = Policy(
        process.feature_dim,
        process.policy_output_dim,
        hidden=8,
        generator=torch.Generator().manual_seed(0),
    )
    generator = torch.Generator().manual_seed(1)
    buffer = ReplayBuffer(4000)
    for epoch in range(30):
        batch = process.rollout(policy, 64, generator)
        buffer.insert(batch.terminal, batch.log_weights.numpy(), batch.log_r.numpy(), "on_policy", epoch)
    weights = buffer.weighted_measure()
    assert weights.sum() == approx(1.0)
    measure = {}
    for string, weight in zip(strings_from_tokens(buffer.states, "AB"), weights):
        measure[string] = measure.get(string, 0.0) + weight
    pi = table.target_distribution()
    tv = 0.5 * sum(abs(measure.get(x, 0.0) - pi[x]) for x in table.terminals)
    assert tv < 0.1
