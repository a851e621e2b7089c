"""
Operational coverage: the share of demand an ambulance can reach within a
response-time threshold, travelling at constant speed with L1 (Manhattan)
distance from the nearest base.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from attrs import define
from pydantic import BaseModel, ConfigDict, Field, field_validator
from stringcase import camelcase

from demandmix.evaluation.scoring import DensityEvaluator
from demandmix.logging.exceptions import InvalidInputException
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import StudyRegion, l1_distance_to_nearest

LOG = logging.getLogger(__name__)

DEFAULT_SPEED = 46.44
DEFAULT_THRESHOLDS = [float(r) for r in range(60, 301, 10)]
Z_95 = 1.96


class ResponseTimeConfig(BaseModel):
    """Bases in km, speed in km/h, thresholds in seconds."""

    model_config = ConfigDict(
        alias_generator=camelcase, populate_by_name=True, frozen=True
    )

    bases: List[Tuple[float, float]] = Field(default_factory=list)
    speed: float = Field(default=DEFAULT_SPEED, gt=0)
    thresholds: List[float] = Field(default_factory=lambda: list(DEFAULT_THRESHOLDS))

    @field_validator("thresholds")
    @classmethod
    def _increasing(cls, value: List[float]) -> List[float]:
        if any(r <= 0 for r in value):
            raise ValueError("thresholds must be positive")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("thresholds must be strictly increasing")
        return value

    def radius_km(self, threshold: float) -> float:
        return self.speed * threshold / 3600.0

    def base_array(self) -> np.ndarray:
        if not self.bases:
            raise InvalidInputException("At least one base location is needed.")
        return np.asarray(self.bases, dtype=float).reshape(-1, 2)


def _cell_masses(
    density: DensityEvaluator, period: int, region: StudyRegion
) -> Tuple[np.ndarray, np.ndarray]:
    grid = region.integration_grid()
    values = np.exp(density.log_density(grid.centers, period))
    return values * grid.cell_area, grid.centers


def coverage_curve(
    density: DensityEvaluator,
    period: int,
    rt: ResponseTimeConfig,
    region: StudyRegion,
    thresholds: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """P_{M,t}(r) for every threshold, with one density evaluation."""
    thresholds = rt.thresholds if thresholds is None else thresholds
    masses, centers = _cell_masses(density, period, region)
    distance = l1_distance_to_nearest(centers, rt.base_array())
    order = np.argsort(distance, kind="stable")
    cumulative = np.concatenate([[0.0], np.cumsum(masses[order])])
    radii = [rt.radius_km(r) for r in thresholds]
    reached = np.searchsorted(distance[order], radii, side="right")
    return np.clip(cumulative[reached], 0.0, 1.0)


def coverage_fraction(
    density: DensityEvaluator,
    period: int,
    rt: ResponseTimeConfig,
    region: StudyRegion,
    threshold: float,
) -> float:
    """Predicted demand mass within speed × r (L1) of the nearest base."""
    return float(coverage_curve(density, period, rt, region, [threshold])[0])


def empirical_coverage(
    xy: np.ndarray,
    rt: ResponseTimeConfig,
    thresholds: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Fraction of the given events within reach, per threshold."""
    thresholds = rt.thresholds if thresholds is None else thresholds
    distance = np.sort(l1_distance_to_nearest(xy, rt.base_array()))
    radii = [rt.radius_km(r) for r in thresholds]
    return np.searchsorted(distance, radii, side="right") / len(distance)


@define(slots=True, frozen=True)
class ErrorCurve:
    """Error(M, r) per threshold with a normal-approximation 95% band."""

    thresholds: np.ndarray
    mean: np.ndarray
    low: np.ndarray
    high: np.ndarray
    n_periods: int
    excluded: int


def operational_error(
    density: DensityEvaluator,
    test: EventTable,
    rt: ResponseTimeConfig,
    region: StudyRegion,
    periods: Optional[Sequence[int]] = None,
) -> ErrorCurve:
    """
    Mean over test periods of |P_{M,t}(r) − P_{test,t}(r)|; the test share is
    the empirical fraction of the period's events within reach. Requested
    periods without test events are excluded and counted.
    """
    by_period = test.by_period()
    periods = sorted(by_period) if periods is None else list(periods)
    used = [t for t in periods if t in by_period]
    excluded = len(periods) - len(used)
    if excluded:
        LOG.info("%d periods without test events excluded", excluded)
    if not used:
        raise InvalidInputException("No test period has events.")
    errors = np.array(
        [
            np.abs(
                coverage_curve(density, t, rt, region)
                - empirical_coverage(by_period[t], rt)
            )
            for t in used
        ]
    )
    mean = errors.mean(axis=0)
    if len(used) > 1:
        half = Z_95 * errors.std(axis=0, ddof=1) / math.sqrt(len(used))
    else:
        half = np.zeros_like(mean)
    return ErrorCurve(
        thresholds=np.asarray(rt.thresholds, dtype=float),
        mean=mean,
        low=mean - half,
        high=mean + half,
        n_periods=len(used),
        excluded=excluded,
    )
