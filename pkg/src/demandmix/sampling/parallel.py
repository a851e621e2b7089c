"""Independent chains with distinct seeds, optionally in worker processes."""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional

import numpy as np
from attrs import define

from demandmix.logging.metrics import BIRTH, DEATH, MH_FAMILIES, AcceptanceTracker
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import StudyRegion
from demandmix.objects.season import SeasonalityConfig
from demandmix.priors import Hyperparams
from demandmix.sampling.birth_death import BirthDeathConfig, run_bd_chain
from demandmix.sampling.fixed_k import DEFAULT_K, McmcConfig, PosteriorDraw, run_chain

LOG = logging.getLogger(__name__)


@define(slots=True, frozen=True)
class ChainRun:
    seed: int
    draws: List[PosteriorDraw]
    acceptance: AcceptanceTracker


def chain_seeds(seed: int, n_chains: int) -> List[int]:
    """The first chain keeps `seed`; the others get spawned child seeds."""
    if n_chains == 1:
        return [seed]
    children = np.random.SeedSequence(seed).spawn(n_chains - 1)
    return [seed] + [int(child.generate_state(1)[0]) for child in children]


def _run_one(
    events: EventTable,
    region: Optional[StudyRegion],
    hp: Hyperparams,
    season: SeasonalityConfig,
    cfg: McmcConfig,
    k: int,
    bd_cfg: Optional[BirthDeathConfig],
) -> ChainRun:
    if bd_cfg is None:
        tracker = AcceptanceTracker()
        draws = run_chain(events, region, hp, season, cfg, k=k, tracker=tracker)
    else:
        tracker = AcceptanceTracker(MH_FAMILIES + (BIRTH, DEATH))
        draws = run_bd_chain(
            events, region, hp, season, cfg, bd_cfg, k=k, tracker=tracker
        )
    return ChainRun(seed=cfg.seed, draws=draws, acceptance=tracker)


def run_chains(
    events: EventTable,
    region: Optional[StudyRegion],
    hp: Hyperparams,
    season: SeasonalityConfig,
    cfg: McmcConfig,
    k: int = DEFAULT_K,
    n_chains: int = 1,
    workers: int = 1,
    bd_cfg: Optional[BirthDeathConfig] = None,
) -> List[ChainRun]:
    """
    Run `n_chains` chains; with `workers` > 1 they run in a process pool.

    Results come back in seed order whatever the worker count, so a run is
    reproducible from `cfg.seed` alone.
    """
    configs = [
        cfg.model_copy(update={"seed": s}) for s in chain_seeds(cfg.seed, n_chains)
    ]
    args = [(events, region, hp, season, c, k, bd_cfg) for c in configs]
    if workers <= 1 or n_chains == 1:
        return [_run_one(*a) for a in args]
    LOG.info("Running %d chains on %d worker processes", n_chains, workers)
    with ProcessPoolExecutor(max_workers=min(workers, n_chains)) as pool:
        futures = [pool.submit(_run_one, *a) for a in args]
        return [f.result() for f in futures]
