import numpy as np
import pytest
from pydantic import ValidationError
from scipy.special import logsumexp

from demandmix.evaluation.scoring import batch_means_ci
from demandmix.logging.exceptions import DemandMixWarning
from demandmix.logging.metrics import C, NU2, PI, RHO, AcceptanceTracker
from demandmix.objects.events import EventTable
from demandmix.objects.mixture import inverse_logit, logit_transform
from demandmix.priors import (
    RHO_MAX,
    CarNeighborhood,
    CarState,
    Hyperparams,
    sample_car_column,
    sample_prior_car_hyper,
)
from demandmix.sampling.fixed_k import (
    BlockedEvents,
    ChainState,
    McmcConfig,
    initialize,
    mh_update_car_hyper,
    mh_update_weights,
    run_chain,
    update_beta,
    update_covariances,
    update_labels,
    update_means,
)


@pytest.fixture()
def state(two_mixture) -> ChainState:
    car = CarState(
        pi=logit_transform(two_mixture.weights.w), c=[0.0], rho=[0.1], nu2=[1.0]
    )
    return ChainState.from_parameters(two_mixture, car, beta=np.eye(2))


def short_config(**kwargs) -> McmcConfig:
    values = dict(n_iter=30, burn_in=10, seed=3, log_every=0)
    values.update(kwargs)
    return McmcConfig(**values)


def test_label_frequencies_match_exact_probabilities(state, rng):
    n = 20_000
    data = BlockedEvents(
        xy=np.tile([[5.0, 4.5]], (n, 1)), blocks=np.zeros(n, dtype=np.int64)
    )
    state.labels = np.ones(n, dtype=np.int64)
    labels = update_labels(state, data, rng)
    log_phi = state.mixture.log_component_densities(np.array([[5.0, 4.5]]))[0]
    logits = log_phi + np.log(state.weights[0])
    exact = np.exp(logits - logsumexp(logits))
    observed = np.bincount(labels - 1, minlength=2) / n
    assert np.allclose(observed, exact, atol=0.015)


def test_means_follow_conjugate_posterior(state, hyperparams, rng):
    gen = np.random.default_rng(1)
    xy = gen.multivariate_normal([4.0, 6.0], state.sigma[0], size=500)
    data = BlockedEvents(xy=xy, blocks=np.zeros(500, dtype=np.int64))
    state.labels = np.ones(500, dtype=np.int64)
    precision = np.linalg.inv(state.sigma[0])
    cov = np.linalg.inv(hyperparams.kappa + 500 * precision)
    expected = cov @ (hyperparams.kappa @ hyperparams.xi + precision @ xy.sum(axis=0))
    draws = np.array(
        [update_means(state, data, hyperparams, rng)[0] for _ in range(2000)]
    )
    assert np.allclose(draws.mean(axis=0), expected, atol=0.01)
    # the empty component is drawn from its prior
    empty = np.array(
        [update_means(state, data, hyperparams, rng)[1] for _ in range(2000)]
    )
    assert np.allclose(empty.mean(axis=0), hyperparams.xi, atol=1.0)


def test_covariances_follow_wishart_mean(state, hyperparams, rng):
    gen = np.random.default_rng(2)
    xy = gen.multivariate_normal(state.mu[0], [[2.0, 0.5], [0.5, 1.0]], size=50)
    data = BlockedEvents(xy=xy, blocks=np.zeros(50, dtype=np.int64))
    state.labels = np.ones(50, dtype=np.int64)
    diff = xy - state.mu[0]
    scale = np.linalg.inv(2.0 * state.beta + diff.T @ diff)
    expected = (2 * hyperparams.alpha + 50) * scale
    precisions = [
        np.linalg.inv(update_covariances(state, data, hyperparams, rng)[0])
        for _ in range(2000)
    ]
    assert np.allclose(np.mean(precisions, axis=0), expected, rtol=0.03, atol=0.01)


def test_beta_follows_wishart_mean(state, hyperparams, rng):
    total = sum(np.linalg.inv(s) for s in state.sigma)
    scale = np.linalg.inv(2.0 * hyperparams.h + 2.0 * total)
    expected = (2 * hyperparams.g + 2 * hyperparams.alpha * state.K) * scale
    draws = [update_beta(state, hyperparams, rng) for _ in range(4000)]
    assert np.allclose(np.mean(draws, axis=0), expected, rtol=0.05, atol=0.01)


def test_car_hyper_updates_stay_in_support(state, rng):
    nb = CarNeighborhood(B=14, d=2)
    cfg = short_config(rw_step_rho=0.2)
    tracker = AcceptanceTracker()
    for _ in range(200):
        state.c, state.rho, state.nu2 = mh_update_car_hyper(
            state, nb, cfg, rng, tracker=tracker
        )
        assert 0 <= state.rho[0] < RHO_MAX
        assert state.nu2[0] > 0
    assert tracker.proposed[C] == tracker.proposed[RHO] == tracker.proposed[NU2]
    assert tracker.proposed[RHO] == 200
    assert 0 < tracker.rate(RHO) < 1


def test_weight_updates_record_every_site(state, training_events, rng):
    nb = CarNeighborhood(B=14, d=2)
    data = BlockedEvents.build(training_events, state.season)
    state.labels = update_labels(state, data, rng)
    tracker = AcceptanceTracker()
    pi = mh_update_weights(state, data, nb, short_config(), rng, tracker=tracker)
    assert pi.shape == (14, 1)
    assert tracker.proposed[PI] == 14
    assert np.all(np.isfinite(pi))


def test_run_chain_is_deterministic(training_events, square, hyperparams, small_season):
    cfg = short_config()
    first = run_chain(training_events, square, hyperparams, small_season, cfg, k=2)
    second = run_chain(training_events, square, hyperparams, small_season, cfg, k=2)
    assert len(first) == len(second) == 20
    for a, b in zip(first, second):
        assert a.iteration == b.iteration
        assert np.array_equal(a.mixture.weights.w, b.mixture.weights.w)
        assert np.array_equal(a.car.rho, b.car.rho)
        assert np.array_equal(a.beta, b.beta)


def test_burn_in_and_thinning(training_events, square, hyperparams, small_season):
    cfg = short_config(thin=4, store_labels=True)
    draws = run_chain(training_events, square, hyperparams, small_season, cfg, k=2)
    assert [d.iteration for d in draws] == [14, 18, 22, 26, 30]
    assert all(len(d.labels) == len(training_events) for d in draws)
    assert all(d.K == 2 for d in draws)


def test_single_component_chain(training_events, square, hyperparams, small_season):
    draws = run_chain(
        training_events, square, hyperparams, small_season, short_config(), k=1
    )
    assert all(d.car.columns == 0 for d in draws)
    assert all(np.all(d.mixture.weights.w == 1.0) for d in draws)


def test_kmeans_initialization(training_events, hyperparams, small_season, rng):
    state = initialize(
        training_events, hyperparams, small_season, 2, rng, method="kmeans"
    )
    assert state.K == 2
    assert state.pi.shape == (14, 1)
    assert set(np.unique(state.labels)) <= {1, 2}


def test_kmeans_falls_back_to_prior_with_few_events(hyperparams, small_season, rng):
    events = EventTable(periods=[1, 2], xy=[[1.0, 1.0], [2.0, 2.0]])
    with pytest.warns(DemandMixWarning, match="k-means"):
        state = initialize(events, hyperparams, small_season, 3, rng, method="kmeans")
    assert state.K == 3


def test_events_outside_region_warn(hyperparams, small_season, square):
    events = EventTable(periods=[1, 2, 3], xy=[[1.0, 1.0], [20.0, 2.0], [3.0, 4.0]])
    with pytest.warns(DemandMixWarning, match="outside the study region"):
        run_chain(events, square, hyperparams, small_season, short_config(), k=1)


@pytest.mark.parametrize("n_iter, burn_in", [(10, 10), (10, 20)])
def test_burn_in_must_leave_draws(n_iter, burn_in):
    with pytest.raises(ValidationError):
        McmcConfig(n_iter=n_iter, burn_in=burn_in)


THREE_SIGMA = 0.9973
THREE_SIGMA_Z = 3.0


def assert_near(series, expected, extra_half_width=0.0):
    mean, half = batch_means_ci(series, confidence=THREE_SIGMA)
    assert abs(mean - expected) <= np.hypot(half, extra_half_width), (mean, expected)


@pytest.mark.slow
def test_chain_without_events_returns_the_prior(small_season):
    hp = Hyperparams(
        xi=[2.0, -1.0],
        kappa=np.eye(2),
        h=np.eye(2),
        c_variance=1.0,
        nu2_max=2.0,
    )
    cfg = McmcConfig(n_iter=60_000, burn_in=10_000, thin=5, seed=8, log_every=0)
    draws = run_chain(EventTable.empty(), None, hp, small_season, cfg, k=3)

    mu = np.array([[comp.mu for comp in d.mixture.components] for d in draws])
    z = (mu - hp.xi).reshape(len(draws), -1)
    assert_near(z.mean(axis=1), 0.0)
    assert_near((z**2).mean(axis=1), 1.0)

    c = np.array([d.car.c for d in draws])
    rho = np.array([d.car.rho for d in draws])
    nu2 = np.array([d.car.nu2 for d in draws])
    assert_near(c.mean(axis=1), 0.0)
    assert_near((c**2).mean(axis=1), 1.0)
    assert_near(rho.mean(axis=1), RHO_MAX / 2)
    assert_near(((rho - RHO_MAX / 2) ** 2).mean(axis=1), RHO_MAX**2 / 12)
    assert_near(nu2.mean(axis=1), 1.0)
    assert_near(((nu2 - 1.0) ** 2).mean(axis=1), 1.0 / 3)

    # π has no prior variance as ρ → 1/4; the weights it maps to are bounded
    gen = np.random.default_rng(9)
    nb = CarNeighborhood(small_season.B, small_season.d)
    n = 20_000
    forward = np.empty((n, small_season.B, 3))
    for i in range(n):
        c0, rho0, nu20 = sample_prior_car_hyper(gen, size=2, hp=hp)
        pi = np.column_stack(
            [sample_car_column(c0[r], rho0[r], nu20[r], nb, gen) for r in range(2)]
        )
        forward[i] = inverse_logit(pi)
    w = np.array([d.mixture.weights.w for d in draws])
    for r in (0, 2):
        for power in (1, 2):
            expected = (forward[:, :, r] ** power).mean(axis=1)
            spread = THREE_SIGMA_Z * expected.std(ddof=1) / np.sqrt(n)
            assert_near((w[:, :, r] ** power).mean(axis=1), expected.mean(), spread)
