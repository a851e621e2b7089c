import numpy as np
import pytest

from demandmix.objects.events import EventTable
from demandmix.objects.geometry import StudyRegion
from demandmix.objects.mixture import Component, MixtureState, WeightMatrix
from demandmix.objects.season import SeasonalityConfig
from demandmix.priors import Hyperparams


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_season() -> SeasonalityConfig:
    """Two weeks of 12-hour periods: 7-day cycle of 14 blocks, 2 periods a day."""
    return SeasonalityConfig(T=28, B=14, d=2)


@pytest.fixture(scope="session")
def square() -> StudyRegion:
    return StudyRegion.box(0.0, 0.0, 10.0, 10.0, grid_resolution=0.25)


@pytest.fixture(scope="session")
def two_components():
    return [
        Component(mu=[3.0, 3.0], sigma=[[1.0, 0.3], [0.3, 0.8]]),
        Component(mu=[7.0, 6.5], sigma=[[0.6, -0.1], [-0.1, 1.2]]),
    ]


@pytest.fixture(scope="session")
def two_mixture(two_components, small_season) -> MixtureState:
    first = 0.2 + 0.6 * (np.arange(small_season.B) % 2)
    weights = np.column_stack([first, 1.0 - first])
    return MixtureState(
        components=two_components, weights=WeightMatrix(weights), season=small_season
    )


@pytest.fixture(scope="session")
def hyperparams() -> Hyperparams:
    return Hyperparams(
        xi=[5.0, 5.0], kappa=np.diag([0.01, 0.01]), h=np.diag([0.1, 0.1])
    )


@pytest.fixture()
def few_events() -> EventTable:
    return EventTable(
        periods=[1, 1, 2, 3, 3, 3, 15],
        xy=[[1, 1], [2, 2], [5, 5], [3, 4], [7, 7], [6, 5], [2, 8]],
    )


@pytest.fixture(scope="session")
def training_events(two_mixture: MixtureState) -> EventTable:
    """About 120 events drawn from `two_mixture` over its full horizon."""
    gen = np.random.default_rng(7)
    season = two_mixture.season
    periods = np.repeat(np.arange(1, season.T + 1), 4)
    blocks = (periods - 1) % season.B
    w = two_mixture.weights.w[blocks]
    labels = (gen.random(len(periods))[:, None] > np.cumsum(w, axis=1)).sum(axis=1)
    xy = np.empty((len(periods), 2))
    for j, comp in enumerate(two_mixture.components):
        mask = labels == j
        xy[mask] = gen.multivariate_normal(comp.mu, comp.sigma, size=int(mask.sum()))
    return EventTable(periods=periods, xy=xy)
