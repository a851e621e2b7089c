from demandmix.sampling.birth_death import (
    BirthDeathConfig,
    run_bd_chain,
    run_bd_stage,
    truncated_poisson_logpmf,
)
from demandmix.sampling.fixed_k import (
    ChainState,
    McmcConfig,
    PosteriorDraw,
    run_chain,
)
from demandmix.sampling.parallel import ChainRun, run_chains

__all__ = [
    "BirthDeathConfig",
    "ChainRun",
    "ChainState",
    "McmcConfig",
    "PosteriorDraw",
    "run_bd_chain",
    "run_bd_stage",
    "run_chain",
    "run_chains",
    "truncated_poisson_logpmf",
]
