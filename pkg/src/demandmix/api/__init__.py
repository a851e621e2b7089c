from demandmix.api.operations import (
    archive_from_runs,
    read_draws,
    receive,
    send,
    write_draws,
)
from demandmix.api.tables import read_bases, read_events, read_region, write_events

__all__ = [
    "archive_from_runs",
    "read_bases",
    "read_draws",
    "read_events",
    "read_region",
    "receive",
    "send",
    "write_draws",
    "write_events",
]
