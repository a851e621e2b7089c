import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from demandmix.logging.exceptions import (
    DegenerateDataException,
    InvalidInputException,
    ProprietyException,
)
from demandmix.objects.events import EventTable
from demandmix.objects.mixture import logit_transform
from demandmix.priors import (
    RHO_MAX,
    CarNeighborhood,
    CarState,
    Hyperparams,
    car_conditional,
    car_joint_precision,
    car_log_density,
    hyperparams_from_data,
    log_prior,
    log_prior_weight_space,
    sample_car_column,
    sample_prior_car_hyper,
    sample_prior_component,
)


def test_hyperparams_from_data(few_events):
    hp = hyperparams_from_data(few_events)
    assert hp.xi.tolist() == [3.0, 5.0]
    assert np.allclose(hp.kappa, np.diag([1 / 36, 1 / 49]))
    assert np.allclose(hp.h, np.diag([10 / 36, 10 / 49]))
    assert hp.alpha == 3.0
    assert hp.g == 1.0


@pytest.mark.parametrize(
    "table",
    [
        EventTable(periods=[1], xy=[[1.0, 2.0]]),
        EventTable(periods=[1, 2, 3], xy=[[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]]),
    ],
)
def test_degenerate_hyperparams(table):
    with pytest.raises(DegenerateDataException):
        hyperparams_from_data(table)


def test_neighbors_wrap_around():
    nb = CarNeighborhood(B=14, d=2)
    assert sorted(nb.neighbors(1).tolist()) == [2, 3, 13, 14]
    assert sorted(nb.neighbors(14).tolist()) == [1, 2, 12, 13]
    weekly = CarNeighborhood(B=84, d=12)
    assert sorted(weekly.neighbors(1).tolist()) == [2, 13, 73, 84]
    with pytest.raises(InvalidInputException):
        nb.neighbors(15)


@pytest.mark.parametrize("B, d", [(4, 2), (24, 12), (2, 1)])
def test_short_cycle_rejected(B, d):
    with pytest.raises(InvalidInputException):
        CarNeighborhood(B=B, d=d)


def test_adjacency_is_symmetric_with_degree_four():
    nb = CarNeighborhood(B=84, d=12)
    adjacency = nb.adjacency
    assert np.array_equal(adjacency, adjacency.T)
    assert np.all(adjacency.sum(axis=1) == 4)
    assert np.all(np.diag(adjacency) == 0)


@pytest.mark.parametrize("rho", [0.0, 0.05, 0.1, 0.2, 0.249, 0.2499])
def test_joint_precision_positive_definite(rho):
    nb = CarNeighborhood(B=84, d=12)
    state = CarState(pi=np.zeros((84, 1)), c=[0.0], rho=[rho], nu2=[2.0])
    assert np.linalg.eigvalsh(car_joint_precision(1, state, nb)).min() > 0


@pytest.mark.parametrize("rho", [0.25, 0.3, -0.01])
def test_improper_rho_rejected(rho):
    nb = CarNeighborhood(B=14, d=2)
    state = CarState(pi=np.zeros((14, 1)), c=[0.0], rho=[rho], nu2=[1.0])
    with pytest.raises(ProprietyException):
        car_joint_precision(1, state, nb)
    assert car_log_density(np.zeros(14), 0.0, rho, 1.0, nb) == -math.inf


def test_conditional_matches_joint_precision(rng):
    nb = CarNeighborhood(B=14, d=2)
    pi = rng.normal(size=(14, 2))
    state = CarState(pi=pi, c=[0.3, -1.0], rho=[0.2, 0.1], nu2=[0.5, 2.0])
    for r in (1, 2):
        q = car_joint_precision(r, state, nb)
        c = state.c[r - 1]
        x = pi[:, r - 1]
        for b in range(1, 15):
            i = b - 1
            others = np.delete(np.arange(14), i)
            expected_mean = c - q[i, others] @ (x[others] - c) / q[i, i]
            mean, variance = car_conditional(b, r, state, nb)
            assert mean == pytest.approx(expected_mean, abs=1e-12)
            assert variance == pytest.approx(1.0 / q[i, i], abs=1e-12)


@pytest.mark.parametrize("rho, nu2", [(0.0, 1.0), (0.1, 0.3), (0.24, 5.0)])
def test_car_log_density_matches_scipy(rng, rho, nu2):
    nb = CarNeighborhood(B=14, d=2)
    x = rng.normal(1.0, 2.0, size=14)
    q = (np.eye(14) - rho * nb.adjacency) / nu2
    expected = multivariate_normal.logpdf(x, np.full(14, 1.5), np.linalg.inv(q))
    assert car_log_density(x, 1.5, rho, nu2, nb) == pytest.approx(expected, rel=1e-9)


def test_sample_car_column_moments(rng):
    nb = CarNeighborhood(B=14, d=2)
    draws = np.array(
        [sample_car_column(2.0, 0.15, 0.8, nb, rng) for _ in range(20_000)]
    )
    expected_cov = np.linalg.inv((np.eye(14) - 0.15 * nb.adjacency) / 0.8)
    assert abs(draws.mean() - 2.0) < 0.05
    assert np.max(np.abs(np.cov(draws, rowvar=False) - expected_cov)) < 0.1


def _parameters(two_mixture, rho):
    w = two_mixture.weights.w
    car = CarState(pi=logit_transform(w), c=[0.0], rho=[rho], nu2=[1.0])
    return SimpleNamespace(mixture=two_mixture, car=car, beta=np.eye(2))


def test_log_prior_support(two_mixture, hyperparams):
    nb = CarNeighborhood(B=14, d=2)
    inside = log_prior(_parameters(two_mixture, 0.1), hyperparams, nb)
    assert math.isfinite(inside)
    assert log_prior(_parameters(two_mixture, RHO_MAX), hyperparams, nb) == -math.inf


def test_weight_space_prior_adds_log_jacobian(two_mixture, hyperparams):
    nb = CarNeighborhood(B=14, d=2)
    params = _parameters(two_mixture, 0.1)
    jacobian = -np.sum(np.log(two_mixture.weights.w))
    assert log_prior_weight_space(params, hyperparams, nb) == pytest.approx(
        log_prior(params, hyperparams, nb) + jacobian
    )


def test_sample_prior_component_moments(hyperparams, rng):
    beta = np.array([[0.5, 0.1], [0.1, 0.4]])
    draws = [sample_prior_component(hyperparams, beta, rng) for _ in range(4000)]
    mus = np.array([d.mu for d in draws])
    precisions = np.array([np.linalg.inv(d.sigma) for d in draws])
    assert np.allclose(mus.mean(axis=0), hyperparams.xi, atol=0.5)
    # E[Σ⁻¹] = 2α (2β)⁻¹
    expected = hyperparams.alpha * np.linalg.inv(beta)
    assert np.allclose(precisions.mean(axis=0), expected, rtol=0.05, atol=0.2)


@pytest.mark.parametrize("scales", [dict(c_variance=0.0), dict(nu2_max=2e4)])
def test_prior_scales_are_bounded(scales):
    with pytest.raises(InvalidInputException, match="must lie in"):
        Hyperparams(xi=[0.0, 0.0], kappa=np.eye(2), h=np.eye(2), **scales)


def test_narrow_car_hyperprior(two_mixture, rng):
    hp = Hyperparams(
        xi=[5.0, 5.0], kappa=np.eye(2), h=np.eye(2), c_variance=1.0, nu2_max=2.0
    )
    c, rho, nu2 = sample_prior_car_hyper(rng, size=5000, hp=hp)
    assert c.std() == pytest.approx(1.0, rel=0.05)
    assert 0 <= rho.min() and rho.max() < RHO_MAX
    assert 0 < nu2.min() and nu2.max() <= 2.0
    nb = CarNeighborhood(B=14, d=2)
    wide = Hyperparams(xi=hp.xi, kappa=hp.kappa, h=hp.h)
    params = _parameters(two_mixture, 0.1)
    # ν² = 1 sits inside both supports; only the c and ν² priors differ
    delta = math.log(1e4 / 2.0) + 0.5 * math.log(1e4)
    assert log_prior(params, hp, nb) - log_prior(params, wide, nb) == pytest.approx(
        delta, abs=1e-6
    )
