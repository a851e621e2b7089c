from typing import Dict, Iterable, List, Optional

import numpy as np
from attrs import define, field

from demandmix.logging.exceptions import InvalidInputException
from demandmix.objects.geometry import SpatialPoint
from demandmix.objects.season import SeasonalityConfig, block_of


def _period(instance, attribute, value: int) -> None:
    if value < 1:
        raise InvalidInputException(f"Period index must be >= 1, got {value}")
    if instance.season is not None and value > instance.season.T:
        raise InvalidInputException(
            f"Period {value} is beyond the horizon T={instance.season.T}"
        )


@define(slots=True, frozen=True)
class Event:
    """
    One demand point: a period index and a planar location. With a season the
    period must also lie within its horizon.
    """

    t: int = field(converter=int, validator=_period)
    location: SpatialPoint
    season: Optional[SeasonalityConfig] = field(default=None, eq=False, repr=False)


def _int_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.int64).reshape(-1)
    arr.setflags(write=False)
    return arr


def _xy_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1, 2)
    arr.setflags(write=False)
    return arr


@define(slots=True, frozen=True)
class EventTable:
    """Column store of events: `periods[i]` is the period of location `xy[i]`."""

    periods: np.ndarray = field(converter=_int_array, eq=False)
    xy: np.ndarray = field(converter=_xy_array, eq=False)
    season: Optional[SeasonalityConfig] = field(
        default=None, eq=False, repr=False, kw_only=True
    )

    def __attrs_post_init__(self) -> None:
        if len(self.periods) != len(self.xy):
            raise InvalidInputException(
                f"{len(self.periods)} periods for {len(self.xy)} locations."
            )
        if not np.all(np.isfinite(self.xy)):
            raise InvalidInputException("Event locations must be finite.")
        if len(self.periods) and self.periods.min() < 1:
            raise InvalidInputException("Period indices start at 1.")
        if self.season is not None and len(self) and self.periods.max() > self.season.T:
            raise InvalidInputException(
                f"Periods must lie in 1..{self.season.T}; got up to"
                f" {int(self.periods.max())}."
            )

    def __len__(self) -> int:
        return len(self.periods)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventTable):
            return NotImplemented
        return np.array_equal(self.periods, other.periods) and np.array_equal(
            self.xy, other.xy
        )

    @classmethod
    def empty(cls) -> "EventTable":
        return cls(periods=np.zeros(0, dtype=np.int64), xy=np.zeros((0, 2)))

    @classmethod
    def from_events(
        cls, events: Iterable[Event], season: Optional[SeasonalityConfig] = None
    ) -> "EventTable":
        events = list(events)
        if not events:
            return cls.empty()
        return cls(
            periods=[e.t for e in events],
            xy=[e.location.to_list() for e in events],
            season=season,
        )

    def to_events(self) -> List[Event]:
        return [
            Event(t=int(t), location=SpatialPoint(x, y), season=self.season)
            for t, (x, y) in zip(self.periods, self.xy)
        ]

    def subset(self, mask: np.ndarray) -> "EventTable":
        return EventTable(
            periods=self.periods[mask], xy=self.xy[mask], season=self.season
        )

    def between(self, first: int, last: int) -> "EventTable":
        """Events with first <= period <= last."""
        return self.subset((self.periods >= first) & (self.periods <= last))

    def shifted(self, offset: int) -> "EventTable":
        return EventTable(periods=self.periods + offset, xy=self.xy)

    def by_period(self) -> Dict[int, np.ndarray]:
        """Locations grouped by period, in increasing period order."""
        order = np.argsort(self.periods, kind="stable")
        periods = self.periods[order]
        xy = self.xy[order]
        keys, starts = np.unique(periods, return_index=True)
        bounds = list(starts[1:]) + [len(periods)]
        return {int(k): xy[s:e] for k, s, e in zip(keys, starts, bounds)}

    def counts(self, horizon: Optional[int] = None) -> np.ndarray:
        """n_t for t = 1..horizon (index 0 is period 1)."""
        horizon = horizon or (int(self.periods.max()) if len(self) else 0)
        return np.bincount(self.periods - 1, minlength=horizon)[:horizon]

    def blocks(self, season: SeasonalityConfig) -> np.ndarray:
        return block_of(self.periods, season)
