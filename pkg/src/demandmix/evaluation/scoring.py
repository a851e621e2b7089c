"""
Predictive scoring: average log score of held-out events, its Monte Carlo
version over posterior draws and batch-means confidence intervals.
"""

import logging
import math
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from attrs import define, field
from scipy import stats
from scipy.special import logsumexp

from demandmix.logging.exceptions import DiagnosticException, InvalidInputException
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import StudyRegion
from demandmix.objects.mixture import RegionNormalizedMixture
from demandmix.sampling.fixed_k import PosteriorDraw

LOG = logging.getLogger(__name__)


class DensityEvaluator(Protocol):
    def log_density(self, xy: np.ndarray, period: int) -> np.ndarray:
        ...


@define(slots=True, frozen=True)
class ScoredDensity:
    """A named forecaster: `evaluator(period, xy)` returns densities."""

    label: str
    evaluator: Callable[[int, np.ndarray], np.ndarray] = field(eq=False)

    def log_density(self, xy: np.ndarray, period: int) -> np.ndarray:
        values = np.asarray(self.evaluator(period, np.atleast_2d(xy)), dtype=float)
        if np.any(values < 0):
            raise InvalidInputException(f"{self.label} produced negative densities.")
        with np.errstate(divide="ignore"):
            return np.log(values)


@define(slots=True, frozen=True)
class PaResult:
    """Average log score; `zero_density` lists (period, row) of −∞ events."""

    value: float
    n_events: int
    floored: int = 0
    zero_density: List[Tuple[int, int]] = field(factory=list)


def predictive_accuracy(
    test: EventTable, density: DensityEvaluator, floor: Optional[float] = None
) -> PaResult:
    """
    (1 / Σ n_t) Σ_t Σ_i log f_t(s_t,i).

    With `floor`, densities below it are raised to it and counted.
    """
    if len(test) == 0:
        raise InvalidInputException(
            "Predictive accuracy needs at least one test event."
        )
    total = 0.0
    floored = 0
    zero: List[Tuple[int, int]] = []
    for t, xy in test.by_period().items():
        log_f = np.asarray(density.log_density(xy, t), dtype=float)
        if floor is not None:
            low = log_f < math.log(floor)
            floored += int(low.sum())
            log_f = np.where(low, math.log(floor), log_f)
        bad = np.flatnonzero(np.isneginf(log_f))
        zero.extend((t, int(i)) for i in bad)
        total += float(log_f.sum())
    if floored:
        LOG.warning("floored points: %d", floored)
    value = -math.inf if zero else total / len(test)
    return PaResult(value=value, n_events=len(test), floored=floored, zero_density=zero)


@define(slots=True, frozen=True)
class _DrawDensity:
    normalized: RegionNormalizedMixture

    def log_density(self, xy: np.ndarray, period: int) -> np.ndarray:
        return self.normalized.log_density(xy, period)


def draw_density(draw: PosteriorDraw, region: StudyRegion) -> DensityEvaluator:
    return _DrawDensity(RegionNormalizedMixture.build(draw.mixture, region))


def pa_per_draw(
    test: EventTable, draws: Sequence[PosteriorDraw], region: StudyRegion
) -> np.ndarray:
    if not draws:
        raise InvalidInputException("At least one posterior draw is needed.")
    return np.array(
        [predictive_accuracy(test, draw_density(d, region)).value for d in draws]
    )


def pa_mix(
    test: EventTable, draws: Sequence[PosteriorDraw], region: StudyRegion
) -> float:
    """Mean over draws of the per-draw predictive accuracy."""
    return float(np.mean(pa_per_draw(test, draws, region)))


def batch_means_ci(
    scores: Sequence[float], confidence: float = 0.95
) -> Tuple[float, float]:
    """
    Mean and half-width from ⌊√M⌋ non-overlapping batches with a Student t
    multiplier.
    """
    x = np.asarray(scores, dtype=float)
    n_batches = int(math.isqrt(len(x)))
    if n_batches < 4:
        raise DiagnosticException(
            f"Batch means need at least 4 batches (16 values), got {len(x)} values."
        )
    size = len(x) // n_batches
    means = x[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    spread = float(means.std(ddof=1))
    multiplier = float(stats.t.ppf(0.5 + confidence / 2.0, df=n_batches - 1))
    return float(x.mean()), multiplier * spread / math.sqrt(n_batches)


def predictive_density_grid(
    draws: Sequence[PosteriorDraw], region: StudyRegion, period: int
) -> np.ndarray:
    """Posterior mean of the region-renormalized density at the grid centers."""
    if not draws:
        raise InvalidInputException("At least one posterior draw is needed.")
    total = np.zeros(region.integration_grid().size)
    for d in draws:
        total += RegionNormalizedMixture.build(d.mixture, region).grid_density(period)
    return total / len(draws)


class PosteriorMeanDensity:
    """Posterior predictive density: the mean of the draws' truncated densities."""

    label = "mixture"

    def __init__(self, draws: Sequence[PosteriorDraw], region: StudyRegion) -> None:
        if not draws:
            raise InvalidInputException("At least one posterior draw is needed.")
        self.members = [RegionNormalizedMixture.build(d.mixture, region) for d in draws]

    def log_density(self, xy: np.ndarray, period: int) -> np.ndarray:
        per_draw = np.array([m.log_density(xy, period) for m in self.members])
        return logsumexp(per_draw, axis=0) - math.log(len(self.members))


def event_log_scores(
    test: EventTable, density: DensityEvaluator, floor: Optional[float] = None
) -> np.ndarray:
    """log f_t(s) of every test event, in `by_period` order."""
    parts = []
    for t, xy in test.by_period().items():
        log_f = np.asarray(density.log_density(xy, t), dtype=float)
        if floor is not None:
            log_f = np.maximum(log_f, math.log(floor))
        parts.append(log_f)
    return np.concatenate(parts) if parts else np.zeros(0)


def normal_ci(scores: Sequence[float], confidence: float = 0.95) -> Tuple[float, float]:
    """Mean and normal-approximation half-width for independent scores."""
    x = np.asarray(scores, dtype=float)
    if len(x) < 2:
        raise DiagnosticException("A confidence interval needs at least two values.")
    if not np.all(np.isfinite(x)):
        return float(x.mean()), math.nan
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    return float(x.mean()), z * float(x.std(ddof=1)) / math.sqrt(len(x))
