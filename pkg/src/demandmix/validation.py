"""
Goodness of fit through uniform residuals.

For each period and spatial dimension the events are sorted along that
dimension and mapped through the marginal cumulative intensity
Λ(v) = δ_t ∫_{region, s_j ≤ v} f_t(s) ds with δ_t = n_t. Consecutive gaps g
give u = 1 − exp(−g), which are iid uniform under a correct model.
"""

import logging
from typing import Dict, List, Sequence
from warnings import warn

import numpy as np
from attrs import define
from scipy import stats

from demandmix.evaluation.scoring import DensityEvaluator, draw_density
from demandmix.logging.exceptions import DemandMixWarning, InvalidInputException
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import StudyRegion
from demandmix.sampling.fixed_k import PosteriorDraw

LOG = logging.getLogger(__name__)


@define(slots=True, frozen=True)
class MarginalIntensity:
    """
    Piecewise-linear Λ along one dimension: every integration cell spreads its
    mass uniformly across its width.
    """

    edges: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def build(
        cls,
        density: DensityEvaluator,
        period: int,
        dimension: int,
        region: StudyRegion,
        delta: float,
    ) -> "MarginalIntensity":
        if dimension not in (0, 1):
            raise InvalidInputException(f"Dimension must be 0 or 1, got {dimension}")
        grid = region.integration_grid()
        mass = np.exp(density.log_density(grid.centers, period)) * grid.cell_area
        edges = grid.edges(dimension)
        columns = np.bincount(
            grid.column_index(dimension), weights=mass, minlength=len(edges) - 1
        )
        total = columns.sum()
        if not total > 0:
            raise InvalidInputException(
                f"Density has no mass inside the region in period {period}."
            )
        cumulative = np.concatenate([[0.0], np.cumsum(columns)]) * (delta / total)
        return cls(edges=edges, cumulative=cumulative)

    def __call__(self, v) -> np.ndarray:
        return np.interp(v, self.edges, self.cumulative)


def marginal_cumulative_intensity(
    dimension: int,
    v: float,
    period: int,
    density: DensityEvaluator,
    region: StudyRegion,
    delta: float,
) -> float:
    marginal = MarginalIntensity.build(density, period, dimension, region, delta)
    return float(marginal(v))


@define(slots=True, frozen=True)
class UniformResiduals:
    """
    `values[m]` holds the residuals of draw m; `periods` and `dimensions`
    label every column. `ties` counts zero gaps from repeated coordinates.
    """

    values: np.ndarray
    periods: np.ndarray
    dimensions: np.ndarray
    ties: int = 0

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    def pooled(self, draw: int = 0) -> np.ndarray:
        return self.values[draw]


def _residuals_for(
    density: DensityEvaluator, test: EventTable, region: StudyRegion
):
    values: List[np.ndarray] = []
    periods: List[np.ndarray] = []
    dims: List[np.ndarray] = []
    ties = 0
    for t, xy in test.by_period().items():
        for dim in (0, 1):
            delta = float(len(xy))
            marginal = MarginalIntensity.build(density, t, dim, region, delta)
            coords = np.sort(xy[:, dim])
            gaps = np.diff(marginal(coords), prepend=0.0)
            ties += int((np.diff(coords) == 0).sum())
            values.append(-np.expm1(-gaps))
            periods.append(np.full(len(xy), t))
            dims.append(np.full(len(xy), dim))
    if not values:
        return np.zeros(0), np.zeros(0, dtype=int), np.zeros(0, dtype=int), 0
    return (
        np.concatenate(values),
        np.concatenate(periods),
        np.concatenate(dims),
        ties,
    )


def residuals_from_densities(
    test: EventTable, densities: Sequence[DensityEvaluator], region: StudyRegion
) -> UniformResiduals:
    if not densities:
        raise InvalidInputException("At least one density is needed.")
    rows = []
    ties = 0
    periods = dims = None
    for density in densities:
        values, periods, dims, ties = _residuals_for(density, test, region)
        rows.append(values)
    if ties:
        warn(f"{ties} tied coordinates produce zero residuals.", DemandMixWarning)
    return UniformResiduals(
        values=np.array(rows), periods=periods, dimensions=dims, ties=ties
    )


def uniform_residuals(
    test: EventTable, draws: Sequence[PosteriorDraw], region: StudyRegion
) -> UniformResiduals:
    """Residuals of the test events under every posterior draw."""
    return residuals_from_densities(
        test, [draw_density(d, region) for d in draws], region
    )


@define(slots=True, frozen=True)
class QqSummary:
    theoretical: np.ndarray
    mean: np.ndarray
    low: np.ndarray
    high: np.ndarray


def qq_summary(residuals: UniformResiduals) -> QqSummary:
    """Mean empirical quantile curve with point-wise 2.5% and 97.5% bands."""
    if residuals.n_draws == 0:
        raise InvalidInputException("At least one draw of residuals is needed.")
    ordered = np.sort(residuals.values, axis=1)
    n = ordered.shape[1]
    theoretical = (np.arange(1, n + 1) - 0.5) / n
    low, high = np.percentile(ordered, [2.5, 97.5], axis=0)
    return QqSummary(
        theoretical=theoretical, mean=ordered.mean(axis=0), low=low, high=high
    )


def uniformity_test(residuals: UniformResiduals) -> Dict[str, np.ndarray]:
    """Kolmogorov-Smirnov statistic and p-value against U(0, 1), per draw."""
    results = [stats.kstest(row, "uniform") for row in residuals.values]
    statistic = np.array([r.statistic for r in results])
    pvalue = np.array([r.pvalue for r in results])
    LOG.info(
        "KS against U(0, 1) over %d draws: median statistic %.4f, median p %.4f",
        len(results),
        float(np.median(statistic)),
        float(np.median(pvalue)),
    )
    return {"statistic": statistic, "pvalue": pvalue}
