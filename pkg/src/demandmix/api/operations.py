import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd
import ujson
from pydantic import ValidationError

from demandmix.logging.exceptions import DemandMixException, InvalidInputException
from demandmix.logging.metrics import AcceptanceTracker
from demandmix.objects.season import SeasonalityConfig
from demandmix.sampling.parallel import ChainRun
from demandmix.serialization.draw_serializer import DrawArchive, DrawSerializer
from demandmix.synthesis import ScenarioSpec
from demandmix.transports.abstract_transport import AbstractTransport
from demandmix.transports.file import FileTransport

LOG = logging.getLogger(__name__)


def archive_from_runs(
    runs: Sequence[ChainRun],
    season: SeasonalityConfig,
    config_hash: str = "",
    run: Optional[Dict[str, Any]] = None,
) -> DrawArchive:
    """Chains in seed order; acceptance counts are summed over chains."""
    if not runs:
        raise InvalidInputException("At least one chain is needed for an archive.")
    acceptance = AcceptanceTracker(families=())
    for r in runs:
        acceptance.merge(r.acceptance)
    return DrawArchive(
        draws=[d for r in runs for d in r.draws],
        season=season,
        seed=runs[0].seed,
        config_hash=config_hash,
        acceptance=acceptance.to_dict(),
        chain_lengths=[len(r.draws) for r in runs],
        run=dict(run or {}, chainSeeds=[r.seed for r in runs]),
    )


def send(
    archive: DrawArchive, id: str, transports: List[AbstractTransport]
) -> bytes:
    """Encodes the archive once and saves it under `id` on every transport."""
    if not transports:
        raise DemandMixException(
            message="You need to provide at least one transport to send an archive."
        )
    payload = DrawSerializer().write(archive)
    for t in transports:
        t.begin_write()
        t.save_object(id, payload)
        t.end_write()
    return payload


def receive(id: str, transport: AbstractTransport) -> DrawArchive:
    payload = transport.get_object(id)
    if payload is None:
        raise InvalidInputException(f"{transport.name} has no archive named {id}.")
    return DrawSerializer().read(payload)


def write_draws(archive: DrawArchive, path: Union[str, Path]) -> None:
    path = Path(path)
    send(archive, path.name, [FileTransport.for_file(path)])
    LOG.info("Wrote %d draws to %s", len(archive), path)


def read_draws(path: Union[str, Path]) -> DrawArchive:
    path = Path(path)
    archive = receive(path.name, FileTransport.for_file(path))
    LOG.info("Read %d draws from %s", len(archive), path)
    return archive


def draws_frame(archive: DrawArchive) -> pd.DataFrame:
    """Long table of the scalar parameters of every draw."""
    rows = []
    for chain, draws in enumerate(archive.chains(), start=1):
        for d in draws:
            base = {"chain": chain, "iteration": d.iteration, "k": d.K}
            for (i, j), value in zip(
                [(0, 0), (0, 1), (1, 1)], [d.beta[0, 0], d.beta[0, 1], d.beta[1, 1]]
            ):
                rows.append(
                    dict(base, parameter=f"beta_{i + 1}{j + 1}", index=0, value=value)
                )
            for name in ("c", "rho", "nu2"):
                for r, value in enumerate(getattr(d.car, name), start=1):
                    rows.append(dict(base, parameter=name, index=r, value=value))
    return pd.DataFrame(
        rows, columns=["chain", "iteration", "k", "parameter", "index", "value"]
    )


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    try:
        data = ujson.loads(Path(path).read_text())
    except (OSError, ValueError) as ex:
        raise InvalidInputException(f"Cannot read scenario {path}", ex) from ex
    try:
        return ScenarioSpec.model_validate(data)
    except ValidationError as ex:
        raise InvalidInputException(f"Invalid scenario {path}: {ex}", ex) from ex


def write_scenario(spec: ScenarioSpec, path: Union[str, Path]) -> None:
    path = Path(path)
    payload = ujson.dumps(spec.model_dump(mode="json", by_alias=True), indent=2)
    FileTransport.for_file(path).save_object(path.name, payload.encode())


__all__ = [
    "archive_from_runs",
    "draws_frame",
    "load_scenario",
    "read_draws",
    "receive",
    "send",
    "write_draws",
    "write_scenario",
]
