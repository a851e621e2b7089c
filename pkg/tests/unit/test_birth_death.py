import math

import numpy as np
import pytest
from pydantic import ValidationError

from demandmix.logging.exceptions import InvalidInputException
from demandmix.objects.mixture import Component, MixtureState, WeightMatrix
from demandmix.priors import CarState
from demandmix.sampling.birth_death import (
    BirthDeathConfig,
    birth,
    death,
    death_rate,
    death_rates,
    run_bd_chain,
    run_bd_stage,
    truncated_poisson_logpmf,
)
from demandmix.sampling.fixed_k import BlockedEvents, ChainState, McmcConfig, run_chain

NO_EVENTS = BlockedEvents(xy=np.zeros((0, 2)), blocks=np.zeros(0, dtype=np.int64))


def make_state(season, weights, labels=None) -> ChainState:
    weights = np.asarray(weights, dtype=float)
    K = weights.shape[1]
    components = [
        Component(mu=[2.0 * j, 1.0], sigma=[[1.0, 0.0], [0.0, 1.0]]) for j in range(K)
    ]
    log_w = np.log(weights)
    car = CarState(
        pi=log_w[:, :-1] - log_w[:, -1:],
        c=np.zeros(K - 1),
        rho=np.arange(1, K) / 100.0,
        nu2=np.ones(K - 1),
    )
    mixture = MixtureState(
        components=components, weights=WeightMatrix(weights), season=season
    )
    return ChainState.from_parameters(mixture, car, np.eye(2), labels=labels)


@pytest.mark.parametrize("tau, k_max", [(15.0, 50), (3.0, 10), (0.5, 4)])
def test_truncated_poisson_is_normalised(tau, k_max):
    cfg = BirthDeathConfig(tau=tau, k_max=k_max)
    probabilities = [
        math.exp(truncated_poisson_logpmf(k, cfg)) for k in range(1, k_max + 1)
    ]
    assert sum(probabilities) == pytest.approx(1.0, abs=1e-12)
    assert probabilities[1] / probabilities[0] == pytest.approx(tau / 2)
    with pytest.raises(InvalidInputException):
        truncated_poisson_logpmf(k_max + 1, cfg)


def test_birth_rate_defaults_to_tau():
    assert BirthDeathConfig(tau=4.0).rate == 4.0
    assert BirthDeathConfig(tau=4.0, birth_rate=2.0).rate == 2.0
    with pytest.raises(ValidationError):
        BirthDeathConfig(birth_rate=-1.0)


def test_single_component_never_dies(small_season):
    state = make_state(small_season, np.ones((14, 1)))
    assert death_rates(state, NO_EVENTS, BirthDeathConfig()).tolist() == [0.0]


def test_prior_only_death_rates(small_season):
    # with no data every component dies at rate · P(K−1) / (K · P(K)) = rate / τ
    state = make_state(small_season, np.full((14, 3), 1 / 3))
    rates = death_rates(state, NO_EVENTS, BirthDeathConfig(tau=5.0, birth_rate=2.0))
    assert np.allclose(rates, 0.4)


def test_poorly_supported_component_dies_faster(small_season):
    weights = np.full((14, 2), 0.5)
    xy = np.random.default_rng(4).normal([0.0, 1.0], 0.5, size=(200, 2))
    data = BlockedEvents(xy=xy, blocks=np.arange(200) % 14)
    state = make_state(small_season, weights, labels=np.ones(200, dtype=np.int64))
    cfg = BirthDeathConfig()
    # component 1 sits on the data at (0, 1), component 2 at (2, 1)
    assert death_rate(2, state, data, cfg) > death_rate(1, state, data, cfg)
    with pytest.raises(InvalidInputException):
        death_rate(3, state, data, cfg)


def test_birth_inserts_before_reference(small_season):
    weights = np.tile([0.2, 0.3, 0.5], (14, 1))
    state = make_state(small_season, weights, labels=np.array([1, 2, 3, 3]))
    newborn = Component(mu=[9.0, 9.0], sigma=[[2.0, 0.0], [0.0, 2.0]])
    grown = birth(state, newborn, 0.25, (1.0, 0.05, 3.0))
    assert grown.K == 4
    assert np.allclose(grown.weights[0], [0.15, 0.225, 0.25, 0.375])
    assert np.allclose(grown.weights.sum(axis=1), 1.0)
    assert grown.mu[2].tolist() == [9.0, 9.0]
    assert grown.labels.tolist() == [1, 2, 4, 4]
    assert grown.c.tolist() == [0.0, 0.0, 1.0]
    assert grown.nu2[-1] == 3.0
    with pytest.raises(InvalidInputException):
        birth(state, newborn, 1.0, (1.0, 0.05, 3.0))


def test_death_renormalises_and_relabels(small_season):
    weights = np.tile([0.2, 0.3, 0.5], (14, 1))
    state = make_state(small_season, weights, labels=np.array([1, 2, 3, 2]))
    scores = np.array(
        [[0.0, -5.0, -1.0], [-3.0, 0.0, -1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, -4.0]]
    )
    shrunk = death(state, 2, scores=scores)
    assert shrunk.K == 2
    assert np.allclose(shrunk.weights[0], [0.2 / 0.7, 0.5 / 0.7])
    assert shrunk.labels.tolist() == [1, 2, 2, 1]
    assert shrunk.rho.tolist() == [0.01]


def test_death_of_reference_drops_new_reference_column(small_season):
    weights = np.tile([0.2, 0.3, 0.5], (14, 1))
    state = make_state(small_season, weights, labels=np.array([3, 1]))
    shrunk = death(state, 3)
    assert np.allclose(shrunk.weights[0], [0.4, 0.6])
    assert shrunk.rho.tolist() == [0.01]
    assert shrunk.labels.tolist() == [1, 1]
    with pytest.raises(InvalidInputException):
        death(make_state(small_season, np.ones((14, 1))), 1)


def test_zero_stage_duration_is_identity(small_season, hyperparams, rng):
    state = make_state(small_season, np.full((14, 2), 0.5))
    cfg = BirthDeathConfig(stage_duration=0.0)
    assert run_bd_stage(state, NO_EVENTS, hyperparams, cfg, rng) is state


@pytest.mark.slow
def test_stage_without_data_samples_the_prior_on_k(small_season, hyperparams, rng):
    cfg = BirthDeathConfig(tau=3.0, k_max=10)
    state = make_state(small_season, np.ones((14, 1)))
    ks = []
    for stage in range(20_100):
        state = run_bd_stage(state, NO_EVENTS, hyperparams, cfg, rng)
        if stage >= 100:
            ks.append(state.K)
    assert max(ks) <= 10
    observed = np.bincount(ks, minlength=11)[1:] / len(ks)
    expected = np.exp([truncated_poisson_logpmf(k, cfg) for k in range(1, 11)])
    assert 0.5 * np.abs(observed - expected).sum() <= 0.05


def test_zero_birth_rate_reduces_to_fixed_k(
    training_events, square, hyperparams, small_season
):
    cfg = McmcConfig(n_iter=15, burn_in=5, seed=11, log_every=0)
    fixed = run_chain(training_events, square, hyperparams, small_season, cfg, k=2)
    variable = run_bd_chain(
        training_events,
        square,
        hyperparams,
        small_season,
        cfg,
        BirthDeathConfig(birth_rate=0.0),
        k=2,
    )
    assert [d.K for d in variable] == [2] * 10
    for a, b in zip(fixed, variable):
        assert np.array_equal(a.mixture.weights.w, b.mixture.weights.w)
        assert np.array_equal(a.beta, b.beta)
