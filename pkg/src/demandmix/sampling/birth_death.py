"""
Variable-K sampling: a continuous-time birth-death stage over the number of
components, interleaved with the fixed-K sweep.

Births draw a component from the priors and give it weight w ~ Beta(1, K) in
every block, scaling the existing weights by (1 − w). Component j dies at rate

    birth_rate × L(without j) / L × P(K − 1) / (K · P(K))

so that with no data the number of components is distributed exactly as the
truncated Poisson prior. Newborns are inserted just before the reference
(last) component, so the logit reference only changes when it dies.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import gammaln, logsumexp
from stringcase import camelcase

from demandmix.logging.exceptions import InvalidInputException
from demandmix.logging.metrics import BIRTH, DEATH, MH_FAMILIES, AcceptanceTracker
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import StudyRegion
from demandmix.objects.mixture import Component, log_gaussian_pdf2d
from demandmix.objects.season import SeasonalityConfig
from demandmix.priors import (
    Hyperparams,
    sample_prior_car_hyper,
    sample_prior_component,
)
from demandmix.sampling.fixed_k import (
    BlockedEvents,
    ChainState,
    EventsLike,
    McmcConfig,
    PosteriorDraw,
    as_blocked,
    component_log_densities,
    run_chain,
)

LOG = logging.getLogger(__name__)


class BirthDeathConfig(BaseModel):
    model_config = ConfigDict(
        alias_generator=camelcase, populate_by_name=True, frozen=True
    )

    tau: float = Field(default=15.0, gt=0)
    k_max: int = Field(default=50, ge=1)
    birth_rate: Optional[float] = Field(default=None, ge=0)
    stage_duration: float = Field(default=1.0, ge=0)

    @property
    def rate(self) -> float:
        """Births per unit virtual time; defaults to τ."""
        return self.tau if self.birth_rate is None else self.birth_rate

    @model_validator(mode="after")
    def _check_rate(self) -> "BirthDeathConfig":
        if not math.isfinite(self.rate):
            raise ValueError("birth_rate must be finite")
        return self


def truncated_poisson_logpmf(k: int, cfg: BirthDeathConfig) -> float:
    """log P(K = k) with P(K) ∝ τ^K / K! on 1..k_max."""
    if not 1 <= k <= cfg.k_max:
        raise InvalidInputException(f"K={k} is outside 1..{cfg.k_max}")
    support = np.arange(1, cfg.k_max + 1)
    log_terms = support * math.log(cfg.tau) - gammaln(support + 1)
    return float(log_terms[k - 1] - logsumexp(log_terms))


def _log_likelihood_terms(
    state: ChainState, data: BlockedEvents, log_phi: Optional[np.ndarray] = None
) -> np.ndarray:
    """(n, K) matrix log φ_ij + log p_{b(i),j}."""
    if log_phi is None:
        log_phi = component_log_densities(state, data.xy)
    return log_phi + state.log_weights[data.blocks]


def death_rates(
    state: ChainState,
    events: EventsLike,
    cfg: BirthDeathConfig,
    log_phi: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Death rate of every component, computed in log space."""
    K = state.K
    if K == 1 or cfg.rate == 0:
        return np.zeros(K)
    data = as_blocked(events, state.season)
    log_prior_ratio = (
        truncated_poisson_logpmf(K - 1, cfg)
        - math.log(K)
        - truncated_poisson_logpmf(K, cfg)
    )
    base = math.log(cfg.rate) + log_prior_ratio
    if data.n == 0:
        return np.full(K, math.exp(base))

    terms = _log_likelihood_terms(state, data, log_phi)
    full = float(logsumexp(terms, axis=1).sum())
    log_w = state.log_weights
    rates = np.empty(K)
    for j in range(K):
        rest = np.delete(terms, j, axis=1)
        # remaining weights are rescaled to sum to 1 in every block
        norm = logsumexp(np.delete(log_w, j, axis=1), axis=1)
        without = float((logsumexp(rest, axis=1) - norm[data.blocks]).sum())
        rates[j] = math.exp(min(base + without - full, 700.0))
    return rates


def death_rate(
    j: int, state: ChainState, events: EventsLike, cfg: BirthDeathConfig
) -> float:
    """Death rate of 1-based component j."""
    if not 1 <= j <= state.K:
        raise InvalidInputException(f"Component {j} is outside 1..{state.K}")
    return float(death_rates(state, events, cfg)[j - 1])


def _pi_from_log_weights(log_w: np.ndarray) -> np.ndarray:
    return log_w[:, :-1] - log_w[:, -1:]


def birth(
    state: ChainState,
    component: Component,
    w: float,
    car_hyper: Tuple[float, float, float],
) -> ChainState:
    """
    Add a component with weight w in every block, just before the reference.

    `car_hyper` is the (c, ρ, ν²) of the new weight column.
    """
    if not 0 < w < 1:
        raise InvalidInputException(f"Birth weight must lie in (0, 1), got {w}")
    K = state.K
    log_w = state.log_weights + math.log1p(-w)
    log_w = np.insert(log_w, K - 1, math.log(w), axis=1)
    c, rho, nu2 = car_hyper
    labels = state.labels.copy()
    labels[labels == K] = K + 1
    return ChainState(
        labels=labels,
        mu=np.insert(state.mu, K - 1, component.mu, axis=0),
        sigma=np.insert(state.sigma, K - 1, component.sigma, axis=0),
        pi=_pi_from_log_weights(log_w),
        c=np.append(state.c, c),
        rho=np.append(state.rho, rho),
        nu2=np.append(state.nu2, nu2),
        beta=state.beta,
        season=state.season,
    )


def death(
    state: ChainState, j: int, scores: Optional[np.ndarray] = None
) -> ChainState:
    """
    Remove 1-based component j and rescale every weight row to sum to 1.

    Events labelled j move to their highest-scoring remaining component when
    `scores` (n, K) is given, otherwise to component 1.
    """
    K = state.K
    if K == 1:
        raise InvalidInputException("The last remaining component cannot die.")
    if not 1 <= j <= K:
        raise InvalidInputException(f"Component {j} is outside 1..{K}")
    log_w = np.delete(state.log_weights, j - 1, axis=1)
    log_w -= logsumexp(log_w, axis=1, keepdims=True)
    # the dying column's CAR parameters, or the new reference's when the
    # reference itself dies
    dropped = min(j - 1, K - 2)
    result = ChainState(
        labels=state.labels.copy(),
        mu=np.delete(state.mu, j - 1, axis=0),
        sigma=np.delete(state.sigma, j - 1, axis=0),
        pi=_pi_from_log_weights(log_w),
        c=np.delete(state.c, dropped),
        rho=np.delete(state.rho, dropped),
        nu2=np.delete(state.nu2, dropped),
        beta=state.beta,
        season=state.season,
    )
    labels = result.labels
    orphans = labels == j
    labels[labels > j] -= 1
    if orphans.any() and scores is not None:
        remaining = np.delete(scores[orphans], j - 1, axis=1)
        labels[orphans] = np.argmax(remaining, axis=1) + 1
    elif orphans.any():
        labels[orphans] = 1
    return result


def run_bd_stage(
    state: ChainState,
    events: EventsLike,
    hp: Hyperparams,
    cfg: BirthDeathConfig,
    rng: np.random.Generator,
    tracker: Optional[AcceptanceTracker] = None,
) -> ChainState:
    """Simulate the birth-death jump process for `stage_duration` virtual time."""
    if cfg.stage_duration == 0:
        return state
    data = as_blocked(events, state.season)
    log_phi = component_log_densities(state, data.xy)
    elapsed = 0.0
    while True:
        K = state.K
        births = cfg.rate if K < cfg.k_max else 0.0
        deaths = death_rates(state, data, cfg, log_phi=log_phi)
        total = births + float(deaths.sum())
        if total <= 0:
            break
        elapsed += rng.exponential(1.0 / total)
        if elapsed > cfg.stage_duration:
            break
        if rng.random() * total < births:
            component = sample_prior_component(hp, state.beta, rng)
            w = rng.beta(1.0, K)
            c, rho, nu2 = sample_prior_car_hyper(rng, hp=hp)
            hyper = (float(c), float(rho), float(nu2))
            state = birth(state, component, float(w), hyper)
            column = log_gaussian_pdf2d(data.xy, component, index=K)
            log_phi = np.insert(log_phi, K - 1, column, axis=1)
            kind = BIRTH
        else:
            cumulative = np.cumsum(deaths)
            u = rng.random() * cumulative[-1]
            j = int(np.searchsorted(cumulative, u, side="right"))
            j = min(j, K - 1)
            scores = log_phi + state.log_weights[data.blocks]
            state = death(state, j + 1, scores=scores)
            log_phi = np.delete(log_phi, j, axis=1)
            kind = DEATH
        if tracker is not None:
            tracker.record(kind, True)
        LOG.debug("%s at virtual time %.4f: K=%d", kind, elapsed, state.K)
    return state


def run_bd_chain(
    events: EventTable,
    region: Optional[StudyRegion],
    hp: Hyperparams,
    season: SeasonalityConfig,
    cfg_mcmc: McmcConfig,
    cfg_bd: BirthDeathConfig,
    k: int = 1,
    tracker: Optional[AcceptanceTracker] = None,
) -> List[PosteriorDraw]:
    """Variable-K chain: a birth-death stage, then one fixed-K sweep, per iteration."""
    tracker = tracker if tracker is not None else AcceptanceTracker(
        MH_FAMILIES + (BIRTH, DEATH)
    )
    k = max(1, min(k, cfg_bd.k_max))

    def stage(
        state: ChainState, data: BlockedEvents, rng: np.random.Generator
    ) -> ChainState:
        return run_bd_stage(state, data, hp, cfg_bd, rng, tracker=tracker)

    draws = run_chain(
        events, region, hp, season, cfg_mcmc, k=k, tracker=tracker, stage=stage
    )
    if draws:
        ks = np.array([d.K for d in draws])
        LOG.info(
            "Variable-K chain: mean K %.2f, range %d..%d", ks.mean(), ks.min(), ks.max()
        )
    return draws
