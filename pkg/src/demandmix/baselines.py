"""
Comparison forecasters.

MEDIC averages normalized demand histograms of corresponding past periods on
a regular grid; MEDIC-KDE averages per-period kernel density estimates of the
same past periods instead. Both forecasts are renormalized to the study
region with the same midpoint grid the mixture model uses.
"""

import logging
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple
from warnings import warn

import numpy as np
from attrs import define, field
from scipy.special import logsumexp

from demandmix.logging.exceptions import (
    DegenerateRegionException,
    DemandMixWarning,
    InvalidInputException,
    UnavailableForecastException,
)
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import GridSpec, StudyRegion
from demandmix.objects.season import SeasonalityConfig

LOG = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
GRID_DENSITY_FLOOR = 1e-12
_KDE_CHUNK = 4096

# offsets in weeks; converted to periods with the block cycle length
HISTORY_PRESETS: Dict[str, Tuple[int, ...]] = {
    "preceding-4-weeks": (1, 2, 3, 4),
    "preceding-4-weeks-2-years": (1, 2, 3, 4, 53, 54, 55, 56),
    "medic-20": tuple(w + 52 * year for year in range(5) for w in (1, 2, 3, 4)),
}


def _positive_offsets(instance, attribute, value: Tuple[int, ...]) -> None:
    if not value:
        raise InvalidInputException("A history rule needs at least one offset.")
    if any(o <= 0 for o in value):
        raise InvalidInputException(
            f"History offsets must point to the past (> 0), got {list(value)}"
        )


@define(slots=True, frozen=True)
class HistoryRule:
    """Offsets, in periods, of the past periods averaged for a target period."""

    offsets: Tuple[int, ...] = field(
        converter=lambda v: tuple(int(o) for o in v), validator=_positive_offsets
    )

    @classmethod
    def from_weeks(
        cls, weeks: Iterable[int], season: SeasonalityConfig
    ) -> "HistoryRule":
        return cls(offsets=[w * season.B for w in weeks])

    @classmethod
    def preset(cls, name: str, season: SeasonalityConfig) -> "HistoryRule":
        try:
            weeks = HISTORY_PRESETS[name]
        except KeyError as ex:
            raise InvalidInputException(
                f"Unknown history rule '{name}'; choose one of"
                f" {sorted(HISTORY_PRESETS)}",
                ex,
            ) from ex
        return cls.from_weeks(weeks, season)

    def sources(self, target: int) -> List[int]:
        return [target - o for o in self.offsets if target - o >= 1]


def cell_histogram_density(xy: np.ndarray, grid: GridSpec) -> Optional[np.ndarray]:
    """
    Per-cell density count / (n_t · cell_area) as an (nx, ny) array.

    Returns None for a period without events (excluded from averages).
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    ix, iy, valid = grid.cell_index(xy)
    dropped = int((~valid).sum())
    if dropped:
        warn(f"{dropped} events fall outside the forecast grid.", DemandMixWarning)
    n = int(valid.sum())
    if n == 0:
        return None
    counts = np.zeros(grid.shape)
    np.add.at(counts, (ix[valid], iy[valid]), 1.0)
    return counts / (n * grid.cell_area)


def medic_forecast(
    target: int,
    history: Mapping[int, Optional[np.ndarray]],
    rule: HistoryRule,
) -> np.ndarray:
    """Mean of the available historical cell densities for `target`."""
    available = [
        history[t] for t in rule.sources(target) if history.get(t) is not None
    ]
    if not available:
        raise UnavailableForecastException(
            f"No non-empty historical period available for period {target}."
        )
    return np.mean(available, axis=0)


def kde_log_density(
    points: np.ndarray, centers: np.ndarray, bw: Tuple[float, float]
) -> np.ndarray:
    """log of (1/n) Σ_i φ(s; s_i, diag(h1², h2²)) at every point."""
    h1, h2 = bw
    if not (h1 > 0 and h2 > 0):
        raise InvalidInputException(f"Bandwidths must be positive, got {bw}")
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(centers) == 0:
        raise UnavailableForecastException("A KDE needs at least one event.")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    norm = -LOG_2PI - math.log(h1) - math.log(h2) - math.log(len(centers))
    out = np.empty(len(points))
    for start in range(0, len(points), _KDE_CHUNK):
        p = points[start : start + _KDE_CHUNK]
        dx = (p[:, None, 0] - centers[None, :, 0]) / h1
        dy = (p[:, None, 1] - centers[None, :, 1]) / h2
        out[start : start + _KDE_CHUNK] = norm + logsumexp(
            -0.5 * (dx * dx + dy * dy), axis=1
        )
    return out


def kde_density(points: np.ndarray, centers: np.ndarray, bw: Tuple[float, float]):
    return np.exp(kde_log_density(points, centers, bw))


@define(slots=True, frozen=True)
class KdeModel:
    """Product-kernel KDEs, one per training period with events."""

    bandwidths: Tuple[float, float] = field(converter=tuple)
    periods: Dict[int, np.ndarray] = field(factory=dict, eq=False)

    def __attrs_post_init__(self) -> None:
        if len(self.bandwidths) != 2 or min(self.bandwidths) <= 0:
            raise InvalidInputException(
                f"Bandwidths must be two positive values, got {self.bandwidths}"
            )

    @classmethod
    def fit(cls, events: EventTable, bandwidths: Tuple[float, float]) -> "KdeModel":
        return cls(bandwidths=bandwidths, periods=events.by_period())

    def log_density(self, points: np.ndarray, period: int) -> np.ndarray:
        if period not in self.periods:
            raise UnavailableForecastException(f"No events in period {period}.")
        return kde_log_density(points, self.periods[period], self.bandwidths)


def _mean_kde_log_density(
    points: np.ndarray, sources: Sequence[np.ndarray], bw: Tuple[float, float]
) -> np.ndarray:
    per_source = np.array([kde_log_density(points, s, bw) for s in sources])
    return logsumexp(per_source, axis=0) - math.log(len(sources))


def cv_bandwidth(
    train: EventTable,
    candidates: Sequence[Tuple[float, float]],
    season: SeasonalityConfig,
) -> Tuple[Tuple[float, float], Dict[Tuple[float, float], float]]:
    """
    Leave-one-week-out choice of KDE bandwidths.

    Each held-out period is predicted by the mean KDE of the same block in the
    other weeks; candidates are ranked by the average log score of the held-out
    events. Ties go to the smaller h1 + h2. Returns the winner and all scores.
    """
    candidates = [tuple(float(h) for h in c) for c in candidates]
    if not candidates:
        raise InvalidInputException("The bandwidth candidate set is empty.")
    by_period = train.by_period()
    weeks = {(t - 1) // season.B for t in by_period}
    if len(weeks) < 2:
        raise InvalidInputException(
            "Bandwidth cross-validation needs training data from at least two weeks."
        )
    by_block: Dict[int, List[int]] = {}
    for t in by_period:
        by_block.setdefault((t - 1) % season.B, []).append(t)

    folds = []
    for t, xy in by_period.items():
        week = (t - 1) // season.B
        others = [
            by_period[s]
            for s in by_block[(t - 1) % season.B]
            if (s - 1) // season.B != week
        ]
        if others:
            folds.append((xy, others))
    if not folds:
        raise InvalidInputException(
            "No held-out period shares a block with another training week."
        )

    scores: Dict[Tuple[float, float], float] = {}
    for bw in candidates:
        total = sum(float(_mean_kde_log_density(xy, o, bw).sum()) for xy, o in folds)
        scores[bw] = total / sum(len(xy) for xy, _ in folds)
    ranked = sorted(candidates, key=lambda c: (-scores[c], c[0] + c[1]))
    best = ranked[0]
    LOG.info(
        "Bandwidth cross-validation over %d folds: best %s (score %.6f)",
        len(folds),
        best,
        scores[best],
    )
    return best, scores


@define(slots=True, frozen=True)
class KdeForecast:
    """Pointwise mean of historical KDE densities."""

    sources: Tuple[np.ndarray, ...] = field(converter=tuple, eq=False)
    bandwidths: Tuple[float, float]

    def log_density(self, points: np.ndarray) -> np.ndarray:
        return _mean_kde_log_density(points, self.sources, self.bandwidths)

    def density(self, points: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(points))


def medic_kde_forecast(target: int, kdes: KdeModel, rule: HistoryRule) -> KdeForecast:
    sources = [kdes.periods[t] for t in rule.sources(target) if t in kdes.periods]
    if not sources:
        raise UnavailableForecastException(
            f"No non-empty historical period available for period {target}."
        )
    return KdeForecast(sources=sources, bandwidths=kdes.bandwidths)


def _region_mass(values_at_centers: np.ndarray, region: StudyRegion) -> float:
    mass = float(values_at_centers.sum()) * region.integration_grid().cell_area
    if not mass > 0:
        raise DegenerateRegionException(
            "Baseline forecast has no mass inside the study region."
        )
    return mass


class MedicForecaster:
    """Region-renormalized MEDIC forecasts from training events."""

    label = "medic"

    def __init__(
        self,
        train: EventTable,
        grid: GridSpec,
        rule: HistoryRule,
        region: StudyRegion,
        floor: float = GRID_DENSITY_FLOOR,
    ) -> None:
        self.grid = grid
        self.rule = rule
        self.region = region
        self.floor = floor
        by_period = train.by_period()
        horizon = int(train.periods.max()) if len(train) else 0
        self.history = {
            t: cell_histogram_density(by_period.get(t, np.zeros((0, 2))), grid)
            for t in range(1, horizon + 1)
        }
        self._cache: Dict[int, Tuple[np.ndarray, float]] = {}

    def _forecast(self, period: int) -> Tuple[np.ndarray, float]:
        if period not in self._cache:
            values = medic_forecast(period, self.history, self.rule)
            centers = self.region.integration_grid().centers
            mass = _region_mass(self._lookup(values, centers), self.region)
            self._cache[period] = (values, mass)
        return self._cache[period]

    def _lookup(self, values: np.ndarray, xy: np.ndarray) -> np.ndarray:
        ix, iy, valid = self.grid.cell_index(xy)
        out = np.zeros(len(ix))
        out[valid] = values[ix[valid], iy[valid]]
        return out

    def density(self, xy: np.ndarray, period: int) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        values, mass = self._forecast(period)
        return np.where(self.region.contains(xy), self._lookup(values, xy) / mass, 0.0)

    def log_density(self, xy: np.ndarray, period: int) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.density(xy, period))

    def floored_log_density(
        self, xy: np.ndarray, period: int
    ) -> Tuple[np.ndarray, int]:
        """Log density with zeros raised to the floor, plus the floored count."""
        values = self.density(xy, period)
        low = values < self.floor
        return np.log(np.where(low, self.floor, values)), int(low.sum())

    def grid_values(self, period: int) -> np.ndarray:
        """(nx, ny) region-renormalized cell densities (zero in cells outside)."""
        values, mass = self._forecast(period)
        inside = self.region.contains(self.grid.centers()).reshape(self.grid.shape)
        return np.where(inside, values / mass, 0.0)


class MedicKdeForecaster:
    """Region-renormalized MEDIC-KDE forecasts from training events."""

    label = "medic-kde"

    def __init__(
        self,
        train: EventTable,
        bandwidths: Tuple[float, float],
        rule: HistoryRule,
        region: StudyRegion,
    ) -> None:
        self.kdes = KdeModel.fit(train, bandwidths)
        self.rule = rule
        self.region = region
        self._cache: Dict[int, Tuple[KdeForecast, float]] = {}

    def _forecast(self, period: int) -> Tuple[KdeForecast, float]:
        if period not in self._cache:
            forecast = medic_kde_forecast(period, self.kdes, self.rule)
            centers = self.region.integration_grid().centers
            self._cache[period] = (
                forecast,
                _region_mass(forecast.density(centers), self.region),
            )
        return self._cache[period]

    def log_density(self, xy: np.ndarray, period: int) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        forecast, mass = self._forecast(period)
        out = forecast.log_density(xy) - math.log(mass)
        return np.where(self.region.contains(xy), out, -np.inf)

    def density(self, xy: np.ndarray, period: int) -> np.ndarray:
        return np.exp(self.log_density(xy, period))
