"""
CSV tables: events, region vertices, base locations and result tables.

Event files come in two shapes, told apart by the header:
`period,x_<unit>,y_<unit>` (already binned) or
`timestamp_iso8601,x_<unit>,y_<unit>` (binned at load). Coordinates are
converted to km.
"""

import io
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union
from warnings import warn

import numpy as np
import pandas as pd

from demandmix.config import BinningConfig
from demandmix.logging.exceptions import (
    DemandMixWarning,
    InvalidInputException,
    MalformedInputException,
)
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import StudyRegion
from demandmix.objects.units import get_scale_factor_to_km
from demandmix.transports.file import FileTransport

LOG = logging.getLogger(__name__)

MAX_MALFORMED_SHARE = 0.01
FLOAT_FORMAT = "%.17g"
PERIOD = "period"
TIMESTAMP = "timestamp_iso8601"

Rejected = List[Tuple[int, str]]


def _read_frame(path: Union[str, Path]) -> Optional[pd.DataFrame]:
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except pd.errors.EmptyDataError:
        return None
    except OSError as ex:
        raise InvalidInputException(f"Cannot read {path}", ex) from ex
    frame.columns = [str(c).strip().lower() for c in frame.columns]
    return frame


def _coordinate_columns(frame: pd.DataFrame, path) -> Tuple[str, str, float]:
    xs = [c for c in frame.columns if c.startswith("x_")]
    ys = [c for c in frame.columns if c.startswith("y_")]
    if len(xs) != 1 or len(ys) != 1:
        raise InvalidInputException(
            f"{path}: expected one x_<unit> and one y_<unit> column,"
            f" got {list(frame.columns)}"
        )
    x, y = xs[0], ys[0]
    unit = x[2:]
    if y[2:] != unit:
        raise InvalidInputException(f"{path}: {x} and {y} use different units")
    return x, y, get_scale_factor_to_km(unit)


def _coordinates(
    frame: pd.DataFrame, x: str, y: str, scale: float
) -> Tuple[np.ndarray, pd.Series]:
    """Coordinates in km and a per-row reason for rejection ('' when fine)."""
    xy = np.column_stack(
        [pd.to_numeric(frame[c], errors="coerce").to_numpy(float) for c in (x, y)]
    )
    reason = pd.Series("", index=frame.index)
    reason[~np.isfinite(xy).all(axis=1)] = "non-numeric or non-finite coordinate"
    return xy * scale, reason


def _periods_from_column(values: pd.Series) -> Tuple[np.ndarray, pd.Series]:
    numbers = pd.to_numeric(values, errors="coerce").to_numpy(float)
    ok = np.isfinite(numbers) & (numbers == np.round(numbers)) & (numbers >= 1)
    reason = pd.Series("", index=values.index)
    reason[~ok] = "period is not an integer >= 1"
    return np.where(ok, numbers, 0).astype(np.int64), reason


def periods_from_timestamps(
    values: pd.Series, binning: BinningConfig
) -> Tuple[np.ndarray, pd.Series]:
    """
    Bin timestamps into periods; a timestamp exactly on a bin boundary opens
    the later bin. Naive timestamps and epochs are taken as UTC.
    """
    stamps = pd.to_datetime(values, errors="coerce", utc=True, format="ISO8601")
    epoch = pd.Timestamp(binning.epoch)
    epoch = epoch.tz_localize("UTC") if epoch.tzinfo is None else epoch
    width = pd.Timedelta(hours=binning.bin_width_hours).value
    elapsed = (stamps - epoch).to_numpy(dtype="timedelta64[ns]").astype(np.int64)
    valid = stamps.notna().to_numpy()
    periods = np.where(valid, np.floor_divide(elapsed, width) + 1, 0)
    reason = pd.Series("", index=values.index)
    reason[~valid] = "unparseable timestamp"
    reason[valid & (periods < 1)] = "timestamp before the binning epoch"
    return periods.astype(np.int64), reason


def _enforce_rejections(reason: pd.Series, n_rows: int, path) -> np.ndarray:
    bad = reason != ""
    rejected: Rejected = [
        (int(i) + 2, str(r)) for i, r in zip(reason.index[bad], reason[bad])
    ]
    if not rejected:
        return np.ones(n_rows, dtype=bool)
    for line, why in rejected[:20]:
        LOG.warning("%s line %d rejected: %s", path, line, why)
    if len(rejected) > MAX_MALFORMED_SHARE * n_rows:
        raise MalformedInputException(
            f"{path}: {len(rejected)} of {n_rows} rows are malformed"
            f" (limit {MAX_MALFORMED_SHARE:.0%}).",
            rejected=rejected,
        )
    warn(f"{path}: {len(rejected)} malformed rows rejected.", DemandMixWarning)
    return ~bad.to_numpy()


def read_events(
    path: Union[str, Path],
    binning: Optional[BinningConfig] = None,
    horizon: Optional[int] = None,
) -> EventTable:
    """
    Load and validate an event CSV. Bad rows are rejected with their line
    numbers; more than 1% bad rows aborts. Periods beyond `horizon` count as
    bad rows.
    """
    binning = binning or BinningConfig()
    frame = _read_frame(path)
    if frame is None or frame.empty:
        warn(f"{path} holds no events.", DemandMixWarning)
        return EventTable.empty()
    x, y, scale = _coordinate_columns(frame, path)
    xy, reason = _coordinates(frame, x, y, scale)
    if PERIOD in frame.columns:
        periods, time_reason = _periods_from_column(frame[PERIOD])
    elif TIMESTAMP in frame.columns:
        periods, time_reason = periods_from_timestamps(frame[TIMESTAMP], binning)
    else:
        raise InvalidInputException(
            f"{path}: need a '{PERIOD}' or '{TIMESTAMP}' column,"
            f" got {list(frame.columns)}"
        )
    reason = reason.where(reason != "", time_reason)
    if horizon is not None:
        beyond = (reason == "") & (periods > horizon)
        reason[beyond] = f"period beyond the horizon T={horizon}"
    keep = _enforce_rejections(reason, len(frame), path)
    table = EventTable(periods=periods[keep], xy=xy[keep])
    LOG.info("Read %d events from %s", len(table), path)
    return table


def _read_points(path: Union[str, Path]) -> np.ndarray:
    frame = _read_frame(path)
    if frame is None or frame.empty:
        raise InvalidInputException(f"{path} holds no coordinates.")
    x, y, scale = _coordinate_columns(frame, path)
    xy, reason = _coordinates(frame, x, y, scale)
    if (reason != "").any():
        line = int(reason.index[reason != ""][0]) + 2
        raise MalformedInputException(
            f"{path} line {line}: {reason[reason != ''].iloc[0]}",
            rejected=[(line, "non-numeric or non-finite coordinate")],
        )
    return xy


def read_region(path: Union[str, Path], grid_resolution: float = 0.5) -> StudyRegion:
    """Polygon vertices in order, closed implicitly."""
    return StudyRegion(polygon=_read_points(path), grid_resolution=grid_resolution)


def read_bases(path: Union[str, Path]) -> List[Tuple[float, float]]:
    return [(float(x), float(y)) for x, y in _read_points(path)]


def frame_to_bytes(frame: pd.DataFrame) -> bytes:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return buffer.getvalue().encode()


def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    """Write a CSV atomically, floats with 17 significant digits."""
    path = Path(path)
    FileTransport.for_file(path).save_object(path.name, frame_to_bytes(frame))


def events_frame(table: EventTable) -> pd.DataFrame:
    return pd.DataFrame(
        {PERIOD: table.periods, "x_km": table.xy[:, 0], "y_km": table.xy[:, 1]}
    )


def write_events(table: EventTable, path: Union[str, Path]) -> None:
    write_table(events_frame(table), path)
