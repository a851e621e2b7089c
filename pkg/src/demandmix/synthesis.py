"""
Synthetic demand from a known model: Poisson counts per period and locations
drawn from the period's mixture density.
"""

import logging
from typing import List, Optional, Tuple, Union

import numpy as np
from attrs import define, field
from pydantic import BaseModel, ConfigDict, Field, model_validator
from stringcase import camelcase

from demandmix.logging.exceptions import DegenerateScenarioException
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import StudyRegion
from demandmix.objects.mixture import (
    Component,
    MixtureState,
    WeightMatrix,
    inverse_logit,
)
from demandmix.objects.season import SeasonalityConfig
from demandmix.priors import CarNeighborhood, CarState, sample_car_column

LOG = logging.getLogger(__name__)

MIN_ACCEPTANCE = 1e-3
MIN_PROPOSALS = 1000


class ComponentSpec(BaseModel):
    model_config = ConfigDict(alias_generator=camelcase, populate_by_name=True)

    mu: Tuple[float, float]
    sigma: Tuple[Tuple[float, float], Tuple[float, float]]

    def to_component(self) -> Component:
        return Component(mu=self.mu, sigma=self.sigma)


class ScenarioSpec(BaseModel):
    """
    A generating model as written in a scenario file.

    The weight columns come from `pi` when given, otherwise they are drawn
    from the CAR prior with per-column (c, ρ, ν²).
    """

    model_config = ConfigDict(alias_generator=camelcase, populate_by_name=True)

    season: SeasonalityConfig = Field(default_factory=SeasonalityConfig)
    components: List[ComponentSpec] = Field(min_length=1)
    c: Optional[List[float]] = None
    rho: Optional[List[float]] = None
    nu2: Optional[List[float]] = None
    pi: Optional[List[List[float]]] = None
    delta: Union[float, List[float]] = 45.0
    region: List[Tuple[float, float]]
    grid_resolution: float = Field(default=0.5, gt=0)
    truncate: bool = False
    seed: int = 0

    @model_validator(mode="after")
    def _check_shapes(self) -> "ScenarioSpec":
        columns = len(self.components) - 1
        for name in ("c", "rho", "nu2"):
            value = getattr(self, name)
            if value is not None and len(value) != columns:
                raise ValueError(f"{name} needs {columns} entries")
        if self.pi is None and columns and None in (self.c, self.rho, self.nu2):
            raise ValueError("give either pi or all of c, rho and nu2")
        if self.pi is not None and (
            len(self.pi) != self.season.B or any(len(r) != columns for r in self.pi)
        ):
            raise ValueError(f"pi must be a {self.season.B}×{columns} matrix")
        if isinstance(self.delta, list):
            if len(self.delta) != self.season.T:
                raise ValueError(f"delta needs one entry per period ({self.season.T})")
            if any(d < 0 for d in self.delta):
                raise ValueError("delta must be nonnegative")
        elif self.delta < 0:
            raise ValueError("delta must be nonnegative")
        return self


def _nonnegative(instance, attribute, value: np.ndarray) -> None:
    if np.any(value < 0) or not np.all(np.isfinite(value)):
        raise DegenerateScenarioException("Expected counts must be finite and >= 0.")


@define(slots=True, frozen=True)
class Scenario:
    truth: MixtureState
    car: CarState
    delta: np.ndarray = field(validator=_nonnegative, eq=False)
    region: StudyRegion
    seed: int = 0
    truncate: bool = False


def sample_car_weights(
    c, rho, nu2, nb: CarNeighborhood, rng: np.random.Generator
) -> np.ndarray:
    """B×(K−1) transformed weights, each column an exact joint CAR draw."""
    c, rho, nu2 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (c, rho, nu2))
    out = np.empty((nb.B, len(c)))
    for r in range(len(c)):
        out[:, r] = sample_car_column(c[r], rho[r], nu2[r], nb, rng)
    return out


def build_scenario(spec: ScenarioSpec) -> Scenario:
    season = spec.season
    K = len(spec.components)
    if spec.pi is not None:
        pi = np.array(spec.pi, dtype=float).reshape(season.B, K - 1)
        c = pi.mean(axis=0) if spec.c is None else np.array(spec.c)
        rho = np.zeros(K - 1) if spec.rho is None else np.array(spec.rho)
        nu2 = np.ones(K - 1) if spec.nu2 is None else np.array(spec.nu2)
    else:
        hyper = (spec.c, spec.rho, spec.nu2)
        c, rho, nu2 = (np.array(v or [], dtype=float) for v in hyper)
        if K > 1:
            nb = CarNeighborhood(season.B, season.d)
            rng = np.random.default_rng([spec.seed, 0])
            pi = sample_car_weights(c, rho, nu2, nb, rng)
        else:
            pi = np.zeros((season.B, 0))
    delta = np.broadcast_to(np.asarray(spec.delta, dtype=float), (season.T,)).copy()
    return Scenario(
        truth=MixtureState(
            components=[s.to_component() for s in spec.components],
            weights=WeightMatrix(inverse_logit(pi)),
            season=season,
        ),
        car=CarState(pi=pi, c=c, rho=rho, nu2=nu2),
        delta=delta,
        region=StudyRegion(polygon=spec.region, grid_resolution=spec.grid_resolution),
        seed=spec.seed,
        truncate=spec.truncate,
    )


def _draw_locations(
    truth: MixtureState, blocks: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    w = truth.weights.w[blocks]
    cumulative = np.cumsum(w, axis=1)
    u = rng.random(len(blocks)) * cumulative[:, -1]
    labels = np.minimum((cumulative < u[:, None]).sum(axis=1), truth.K - 1)
    z = rng.standard_normal((len(blocks), 2))
    means = np.array([c.mu for c in truth.components])
    factors = np.array([c.cholesky(j + 1) for j, c in enumerate(truth.components)])
    return means[labels] + np.einsum("nij,nj->ni", factors[labels], z)


def simulate(scenario: Scenario) -> EventTable:
    """
    n_t ~ Poisson(δ_t) events per period, located iid from f_t; with
    truncation, points outside the region are redrawn (label included).
    """
    truth = scenario.truth
    season = truth.season
    rng = np.random.default_rng([scenario.seed, 1])
    counts = rng.poisson(scenario.delta)
    periods = np.repeat(np.arange(1, season.T + 1), counts)
    blocks = (periods - 1) % season.B
    xy = _draw_locations(truth, blocks, rng)

    if scenario.truncate and len(xy):
        proposed = len(xy)
        outside = ~scenario.region.contains(xy)
        accepted = proposed - int(outside.sum())
        while outside.any():
            if proposed >= MIN_PROPOSALS and accepted / proposed < MIN_ACCEPTANCE:
                raise DegenerateScenarioException(
                    f"Rejection sampling into the region accepts {accepted} of"
                    f" {proposed} proposals."
                )
            idx = np.flatnonzero(outside)
            xy[idx] = _draw_locations(truth, blocks[idx], rng)
            inside = scenario.region.contains(xy[idx])
            proposed += len(idx)
            accepted += int(inside.sum())
            outside[idx[inside]] = False
        LOG.debug("Region rejection acceptance %.4f", accepted / proposed)

    LOG.info("Simulated %d events over %d periods", len(periods), season.T)
    return EventTable(periods=periods, xy=xy, season=season)
