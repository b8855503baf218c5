"""
Tests the closed-form targets.
"""
import logging

import numpy as np
import pytest
import torch
from pytest import approx
from scipy.integrate import dblquad

from gfnsmc import log
from gfnsmc.exceptions import CapabilityError, ConfigError, InputError
from gfnsmc.targets import (
    Funnel,
    GaussianMixture,
    ManyWell,
    PlantedMixture,
    SequenceReward,
    exact_sample,
    funnel_log_density,
    gmm_log_density,
    make_target,
    manywell_log_density,
    strings_from_tokens,
    tokens_from_strings,
)
from gfnsmc.targets.manywell import double_well_energy

log.config_root_logger(verbose=True)
logger = logging.getLogger(__name__)


def test_gmm_density_at_an_isolated_mean():
    """ Far components do not contribute at an isolated mean. """
    far = np.column_stack([100.0 + 10.0 * np.arange(39), np.full(39, 100.0)])
    means = np.vstack([[0.0, 0.0], far])
    target = GaussianMixture(dim=2, means=means)
    assert target.components == 40
    value = gmm_log_density(target, [0.0, 0.0])
    assert value == approx(-np.log(40) - np.log(2 * np.pi), abs=1e-10)
    assert value == approx(-5.52672, abs=1e-5)


def test_gmm_layout_is_seeded():
    a = GaussianMixture(dim=2, seed=3)
    b = make_target(a.to_dict())
    assert np.array_equal(a.means, b.means)
    assert not np.array_equal(a.means, GaussianMixture(dim=2, seed=4).means)
    assert a.means.shape == (40, 2)
    assert np.all(np.abs(a.means) <= 40.0)
    assert a.exact_log_z == 0.0


def test_gmm_exact_samples():
    target = GaussianMixture(dim=2, seed=0)
    samples = exact_sample(target, np.random.default_rng(1), 1000)
    assert samples.shape == (1000, 2)
    distance = np.min(
        np.linalg.norm(samples[:, None, :] - target.means[None], axis=-1), axis=1
    )
    assert np.median(distance) < 2.0


def test_funnel_density():
    x = np.zeros(10)
    expected = -0.5 * np.log(2 * np.pi * 9.0) - 9 * 0.5 * np.log(2 * np.pi)
    assert funnel_log_density(x) == approx(expected)
    batch = funnel_log_density(np.zeros((3, 10)))
    assert batch.shape == (3,)


def test_funnel_gradient_matches_finite_differences():
    target = Funnel(dim=10)
    x = torch.as_tensor(np.random.default_rng(0).normal(size=10), dtype=torch.float64)
    grad = target.grad_log_r(x)
    step = 1e-5
    for i in range(10):
        e = torch.zeros(10, dtype=torch.float64)
        e[i] = step
        fd = (float(target.log_r(x + e)) - float(target.log_r(x - e))) / (2 * step)
        assert float(grad[i]) == approx(fd, rel=1e-5, abs=1e-7)


def test_funnel_exact_samples():
    samples = Funnel(dim=10).exact_sample(np.random.default_rng(0), 20000)
    assert samples.shape == (20000, 10)
    assert np.std(samples[:, 0]) == approx(3.0, rel=0.05)


def test_manywell_normaliser():
    target = ManyWell(dim=2)
    z, _ = dblquad(
        lambda b, a: np.exp(-double_well_energy(a, b)), -5.0, 5.0, -10.0, 10.0
    )
    assert target.exact_log_z == approx(np.log(z), rel=1e-6)
    assert ManyWell(dim=32).exact_log_z == approx(16 * target.exact_log_z)


def test_manywell_density():
    x = np.array([1.0, 2.0, -1.0, 0.0])
    expected = -(double_well_energy(1.0, 2.0) + double_well_energy(-1.0, 0.0))
    assert manywell_log_density(x) == approx(expected)
    with pytest.raises(InputError):
        ManyWell(dim=3)


def test_manywell_rejection_sampler():
    target = ManyWell(dim=2)
    samples = target.exact_sample(np.random.default_rng(0), 100000)
    edges = np.linspace(-3.5, 3.5, 71)
    histogram, _ = np.histogram(samples[:, 0], bins=edges, density=True)
    centres = 0.5 * (edges[1:] + edges[:-1])
    density = np.exp(-(centres ** 4 - 6 * centres ** 2 - 0.5 * centres))
    assert np.corrcoef(histogram, density)[0, 1] > 0.99
    assert np.std(samples[:, 1]) == approx(1.0, rel=0.02)


def test_planted_mixture():
    target = PlantedMixture()
    assert target.exact_log_z == approx(np.log(7.0))
    value = target.log_r(torch.zeros(1, dtype=torch.float64))
    assert float(value) == approx(np.log(7.0) - 0.5 * np.log(2 * np.pi))
    with pytest.raises(InputError):
        PlantedMixture(z=-1.0)
    rebuilt = make_target(target.to_dict())
    assert rebuilt.exact_log_z == approx(target.exact_log_z)


def test_check_states():
    target = GaussianMixture(dim=2)
    with pytest.raises(InputError):
        target.log_r(torch.zeros(3, dtype=torch.float64))


def test_sequence_encoding():
    tokens = tokens_from_strings(["AB", "BBA"], "AB", 3)
    assert tokens.tolist() == [[0, 1, -1], [1, 1, 0]]
    assert strings_from_tokens(tokens, "AB") == ["AB", "BBA"]
    with pytest.raises(InputError):
        tokens_from_strings(["AC"], "AB", 3)
    with pytest.raises(InputError):
        tokens_from_strings(["ABAB"], "AB", 3)


def test_sequence_reward():
    target = SequenceReward("AB", 4, "count_a_pow2")
    tokens = tokens_from_strings(["AAAB", "BBBB"], "AB", 4)
    assert target.log_r(tokens).tolist() == approx([3 * np.log(2.0), 0.0])
    terminals, log_rewards = target.terminals()
    assert terminals.shape == (16, 4)
    assert target.exact_log_z == approx(np.log(81.0))
    assert target.is_discrete
    samples = target.exact_sample(np.random.default_rng(0), 50)
    assert samples.shape == (50, 4)


def test_sequence_reward_errors():
    target = SequenceReward("AB", 3)
    with pytest.raises(InputError):
        target.log_r(tokens_from_strings(["AB"], "AB", 3))
    with pytest.raises(CapabilityError):
        target.grad_log_r(tokens_from_strings(["ABA"], "AB", 3))
    with pytest.raises(ConfigError):
        SequenceReward("AA", 3)
    with pytest.raises(ConfigError):
        SequenceReward("AB", 3, reward="count_b")


def test_make_target_errors():
    with pytest.raises(ConfigError):
        make_target({"name": "banana"})
    with pytest.raises(ConfigError):
        make_target({"name": "funnel", "dim": 10, "width": 3})
    assert isinstance(make_target({"name": "funnel", "dim": 4}), Funnel)
