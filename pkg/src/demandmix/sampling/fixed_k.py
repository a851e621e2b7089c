"""
Fixed-K posterior sampler.

Each event carries a latent component label. A sweep redraws the labels, the
component means and covariances and the shared covariance scale β by their
conjugate full conditionals, then moves every transformed weight π_{b,r} and
every CAR hyperparameter (c_r, ρ_r, ν²_r) with single-site random-walk
Metropolis-Hastings.

The likelihood is the untruncated mixture; region renormalization only
happens when draws are turned into forecasts.
"""

import logging
import math
from typing import Callable, List, Literal, Optional, Union
from warnings import warn

import numpy as np
from attrs import define, field
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.cluster.vq import kmeans2
from scipy.linalg import cholesky
from scipy.special import logsumexp
from scipy.stats import wishart
from stringcase import camelcase

from demandmix.logging.exceptions import (
    DemandMixWarning,
    NotPositiveDefiniteException,
    SamplerException,
)
from demandmix.logging.metrics import C, NU2, PI, RHO, AcceptanceTracker
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import StudyRegion
from demandmix.objects.mixture import (
    Component,
    MixtureState,
    WeightMatrix,
    log_gaussian_pdf2d,
)
from demandmix.objects.season import SeasonalityConfig
from demandmix.priors import (
    C_PRIOR_VARIANCE,
    NU2_MAX,
    CarNeighborhood,
    CarState,
    Hyperparams,
    car_log_density,
    log_prior_c,
    log_prior_nu2,
    log_prior_rho,
    sample_car_column,
    sample_prior_beta,
    sample_prior_car_hyper,
    sample_prior_component,
)

LOG = logging.getLogger(__name__)

DEFAULT_K = 15
ADAPT_TARGET = (0.2, 0.4)


class McmcConfig(BaseModel):
    model_config = ConfigDict(
        alias_generator=camelcase, populate_by_name=True, frozen=True
    )

    n_iter: int = Field(default=50_000, ge=1)
    burn_in: int = Field(default=25_000, ge=0)
    thin: int = Field(default=1, ge=1)
    rw_step_pi: float = Field(default=0.1, gt=0)
    rw_step_c: float = Field(default=0.1, gt=0)
    rw_step_rho: float = Field(default=0.01, gt=0)
    rw_step_lognu: float = Field(default=0.2, gt=0)
    seed: int = 0
    init: Literal["prior", "kmeans"] = "prior"
    adapt: bool = True
    adapt_interval: int = Field(default=50, ge=1)
    log_every: int = Field(default=1000, ge=0)
    store_labels: bool = False

    @model_validator(mode="after")
    def _check_burn_in(self) -> "McmcConfig":
        if self.burn_in >= self.n_iter:
            raise ValueError(
                f"burn_in ({self.burn_in}) must be smaller than n_iter ({self.n_iter})"
            )
        return self


@define(slots=True)
class StepSizes:
    """Random-walk scales; tuned during burn-in and frozen afterwards."""

    pi: float
    c: float
    rho: float
    lognu: float
    rounds: int = 0

    @classmethod
    def from_config(cls, cfg: McmcConfig) -> "StepSizes":
        return cls(
            pi=cfg.rw_step_pi,
            c=cfg.rw_step_c,
            rho=cfg.rw_step_rho,
            lognu=cfg.rw_step_lognu,
        )

    def adapt(self, tracker: AcceptanceTracker, gamma: float = 1.01) -> None:
        low, high = ADAPT_TARGET
        shrink = gamma**-self.rounds
        for family, name in ((PI, "pi"), (C, "c"), (RHO, "rho"), (NU2, "lognu")):
            rate = tracker.window_rate(family)
            if rate is None or low <= rate <= high:
                continue
            step = getattr(self, name)
            setattr(self, name, step * math.exp(shrink * (rate - 0.5 * (low + high))))
        self.rounds += 1
        tracker.reset_window()


@define(slots=True, frozen=True)
class BlockedEvents:
    """Event locations with their zero-based seasonal block."""

    xy: np.ndarray
    blocks: np.ndarray

    @classmethod
    def build(cls, events: EventTable, season: SeasonalityConfig) -> "BlockedEvents":
        return cls(xy=events.xy, blocks=events.blocks(season) - 1)

    @property
    def n(self) -> int:
        return len(self.blocks)


EventsLike = Union[EventTable, BlockedEvents]


def as_blocked(events: EventsLike, season: SeasonalityConfig) -> BlockedEvents:
    if isinstance(events, BlockedEvents):
        return events
    return BlockedEvents.build(events, season)


def log_softmax_weights(pi: np.ndarray) -> np.ndarray:
    """Row-wise log weights from transformed weights (reference column appended)."""
    z = np.concatenate([pi, np.zeros((pi.shape[0], 1))], axis=1)
    return z - logsumexp(z, axis=1, keepdims=True)


@define(slots=True, frozen=True)
class PosteriorDraw:
    """One stored sample; `labels` is present only when the run keeps them."""

    iteration: int
    mixture: MixtureState
    car: CarState
    beta: np.ndarray = field(eq=False)
    labels: Optional[np.ndarray] = field(default=None, eq=False)

    @property
    def K(self) -> int:
        return self.mixture.K


@define(slots=True)
class ChainState:
    """
    Mutable state of one chain. `labels` are 1-based component indices;
    the weights are always the inverse logit of `pi`.
    """

    labels: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pi: np.ndarray
    c: np.ndarray
    rho: np.ndarray
    nu2: np.ndarray
    beta: np.ndarray
    season: SeasonalityConfig

    @property
    def K(self) -> int:
        return len(self.mu)

    @property
    def log_weights(self) -> np.ndarray:
        return log_softmax_weights(self.pi)

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        return w / w.sum(axis=1, keepdims=True)

    @property
    def components(self) -> List[Component]:
        return [Component(mu=m, sigma=s) for m, s in zip(self.mu, self.sigma)]

    @property
    def mixture(self) -> MixtureState:
        return MixtureState(
            components=self.components,
            weights=WeightMatrix(self.weights),
            season=self.season,
        )

    @property
    def car(self) -> CarState:
        return CarState(pi=self.pi, c=self.c, rho=self.rho, nu2=self.nu2)

    @classmethod
    def from_parameters(
        cls,
        mixture: MixtureState,
        car: CarState,
        beta: np.ndarray,
        labels: Optional[np.ndarray] = None,
    ) -> "ChainState":
        return cls(
            labels=np.ones(0, dtype=np.int64) if labels is None else np.array(labels),
            mu=np.array([comp.mu for comp in mixture.components]),
            sigma=np.array([comp.sigma for comp in mixture.components]),
            pi=np.array(car.pi),
            c=np.array(car.c),
            rho=np.array(car.rho),
            nu2=np.array(car.nu2),
            beta=np.array(beta, dtype=float),
            season=mixture.season,
        )

    def snapshot(self, iteration: int, keep_labels: bool = False) -> PosteriorDraw:
        return PosteriorDraw(
            iteration=iteration,
            mixture=self.mixture,
            car=self.car,
            beta=self.beta.copy(),
            labels=self.labels.copy() if keep_labels else None,
        )

    def check_finite(self, iteration: int) -> None:
        for name in ("mu", "sigma", "pi", "c", "rho", "nu2", "beta"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise SamplerException(
                    f"Parameter {name} became non-finite.", iteration=iteration
                )


def component_log_densities(state: ChainState, xy: np.ndarray) -> np.ndarray:
    """(n, K) matrix of log φ(s_i; μ_j, Σ_j)."""
    out = np.empty((len(xy), state.K))
    for j, comp in enumerate(state.components):
        out[:, j] = log_gaussian_pdf2d(xy, comp, index=j + 1)
    return out


def block_label_counts(state: ChainState, data: BlockedEvents) -> np.ndarray:
    """n_{b,j}: events of block b currently assigned to component j."""
    B, K = state.season.B, state.K
    flat = data.blocks * K + (state.labels - 1)
    return np.bincount(flat, minlength=B * K).reshape(B, K)


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + np.swapaxes(matrix, -1, -2))


def update_labels(
    state: ChainState,
    events: EventsLike,
    rng: np.random.Generator,
    log_phi: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Draw every z_i with Pr(z_i = j) ∝ p_{b(i),j} φ(s_i; μ_j, Σ_j)."""
    data = as_blocked(events, state.season)
    if data.n == 0:
        return np.zeros(0, dtype=np.int64)
    if state.K == 1:
        return np.ones(data.n, dtype=np.int64)
    if log_phi is None:
        log_phi = component_log_densities(state, data.xy)
    logits = log_phi + state.log_weights[data.blocks]
    logits -= logsumexp(logits, axis=1, keepdims=True)
    cumulative = np.cumsum(np.exp(logits), axis=1)
    u = rng.random(data.n) * cumulative[:, -1]
    z = (cumulative < u[:, None]).sum(axis=1)
    return np.minimum(z, state.K - 1).astype(np.int64) + 1


def update_means(
    state: ChainState, events: EventsLike, hp: Hyperparams, rng: np.random.Generator
) -> np.ndarray:
    """
    μ_j ~ Normal(m_j, P_j⁻¹) with P_j = κ + n_j Σ_j⁻¹ and
    m_j = P_j⁻¹(κξ + Σ_j⁻¹ Σ s).
    """
    data = as_blocked(events, state.season)
    K = state.K
    z = state.labels - 1
    counts = np.bincount(z, minlength=K)
    sums = np.zeros((K, 2))
    np.add.at(sums, z, data.xy)
    kappa_xi = hp.kappa @ hp.xi
    out = np.empty((K, 2))
    for j in range(K):
        precision = np.linalg.inv(state.sigma[j])
        cov = _symmetrize(np.linalg.inv(hp.kappa + counts[j] * precision))
        mean = cov @ (kappa_xi + precision @ sums[j])
        out[j] = mean + cholesky(cov, lower=True) @ rng.standard_normal(2)
    return out


def scatter_matrices(state: ChainState, data: BlockedEvents) -> np.ndarray:
    """S_j = Σ (s − μ_j)(s − μ_j)' over events labelled j."""
    z = state.labels - 1
    diff = data.xy - state.mu[z]
    scatter = np.zeros((state.K, 2, 2))
    np.add.at(scatter, z, diff[:, :, None] * diff[:, None, :])
    return scatter


def update_covariances(
    state: ChainState, events: EventsLike, hp: Hyperparams, rng: np.random.Generator
) -> np.ndarray:
    """Σ_j⁻¹ ~ Wishart(2α + n_j, (2β + S_j)⁻¹)."""
    data = as_blocked(events, state.season)
    counts = np.bincount(state.labels - 1, minlength=state.K)
    scatter = scatter_matrices(state, data)
    out = np.empty((state.K, 2, 2))
    for j in range(state.K):
        scale = np.linalg.inv(2.0 * state.beta + scatter[j])
        precision = wishart.rvs(
            df=2 * hp.alpha + counts[j], scale=_symmetrize(scale), random_state=rng
        )
        out[j] = _symmetrize(np.linalg.inv(precision))
        Component(mu=state.mu[j], sigma=out[j]).cholesky(j + 1)
    return out


def update_beta(
    state: ChainState, hp: Hyperparams, rng: np.random.Generator
) -> np.ndarray:
    """β ~ Wishart(2g + 2αK, (2h + 2 Σ_j Σ_j⁻¹)⁻¹)."""
    total_precision = sum(
        (np.linalg.inv(s) for s in state.sigma), start=np.zeros((2, 2))
    )
    scale = _symmetrize(np.linalg.inv(2.0 * hp.h + 2.0 * total_precision))
    beta = wishart.rvs(
        df=2 * hp.g + 2 * hp.alpha * state.K, scale=scale, random_state=rng
    )
    return _symmetrize(beta)


def _row_log_likelihood(counts: np.ndarray, row: np.ndarray) -> float:
    top = row.max()
    return float(counts @ (row - (top + math.log(np.exp(row - top).sum()))))


def mh_update_weights(
    state: ChainState,
    events: EventsLike,
    nb: CarNeighborhood,
    cfg: McmcConfig,
    rng: np.random.Generator,
    tracker: Optional[AcceptanceTracker] = None,
    step: Optional[float] = None,
) -> np.ndarray:
    """
    Single-site random walk on every π_{b,r}, block by block.

    The target for one site is the label-conditional likelihood of the block's
    events, Σ_j n_{b,j} log p_{b,j}, times the CAR conditional of the site.
    """
    K = state.K
    if K == 1:
        return state.pi.copy()
    data = as_blocked(events, state.season)
    counts = block_label_counts(state, data).astype(float)
    step = cfg.rw_step_pi if step is None else step
    B = state.season.B
    noise = rng.normal(0.0, step, size=(B, K - 1))
    log_u = np.log(rng.random((B, K - 1)))
    pi = state.pi.copy()
    table = nb.table
    degree = table.shape[1]
    for b in range(B):
        row = np.append(pi[b], 0.0)
        current = _row_log_likelihood(counts[b], row)
        for r in range(K - 1):
            c_r = state.c[r]
            mean = c_r + state.rho[r] * (pi[table[b], r].sum() - degree * c_r)
            old = row[r]
            new = old + noise[b, r]
            row[r] = new
            proposed = _row_log_likelihood(counts[b], row)
            log_ratio = (
                proposed
                - current
                - ((new - mean) ** 2 - (old - mean) ** 2) / (2.0 * state.nu2[r])
            )
            accepted = bool(log_u[b, r] < log_ratio)
            if accepted:
                pi[b, r] = new
                current = proposed
            else:
                row[r] = old
            if tracker is not None:
                tracker.record(PI, accepted)
    return pi


def car_hyper_log_target(
    column: np.ndarray,
    c: float,
    rho: float,
    nu2: float,
    nb: CarNeighborhood,
    hp: Optional[Hyperparams] = None,
) -> float:
    """CAR joint density of one π column times the priors of (c, ρ, ν²)."""
    c_variance = C_PRIOR_VARIANCE if hp is None else hp.c_variance
    nu2_max = NU2_MAX if hp is None else hp.nu2_max
    prior = log_prior_rho(rho) + log_prior_nu2(nu2, nu2_max)
    if prior == -math.inf:
        return -math.inf
    return prior + log_prior_c(c, c_variance) + car_log_density(column, c, rho, nu2, nb)


def mh_update_car_hyper(
    state: ChainState,
    nb: CarNeighborhood,
    cfg: McmcConfig,
    rng: np.random.Generator,
    tracker: Optional[AcceptanceTracker] = None,
    steps: Optional[StepSizes] = None,
    hp: Optional[Hyperparams] = None,
):
    """Random-walk updates of c_r, ρ_r and log ν²_r for every column r."""
    steps = steps or StepSizes.from_config(cfg)
    c, rho, nu2 = state.c.copy(), state.rho.copy(), state.nu2.copy()

    def record(family: str, accepted: bool) -> None:
        if tracker is not None:
            tracker.record(family, accepted)

    for r in range(state.K - 1):
        column = state.pi[:, r]
        current = car_hyper_log_target(column, c[r], rho[r], nu2[r], nb, hp)

        proposal = c[r] + rng.normal(0.0, steps.c)
        target = car_hyper_log_target(column, proposal, rho[r], nu2[r], nb, hp)
        accepted = bool(math.log(rng.random()) < target - current)
        if accepted:
            c[r], current = proposal, target
        record(C, accepted)

        proposal = rho[r] + rng.normal(0.0, steps.rho)
        target = car_hyper_log_target(column, c[r], proposal, nu2[r], nb, hp)
        accepted = bool(math.log(rng.random()) < target - current)
        if accepted:
            rho[r], current = proposal, target
        record(RHO, accepted)

        log_step = rng.normal(0.0, steps.lognu)
        proposal = nu2[r] * math.exp(log_step)
        target = car_hyper_log_target(column, c[r], rho[r], proposal, nb, hp)
        # log-scale proposal: Jacobian ν²'/ν²
        accepted = bool(math.log(rng.random()) < target - current + log_step)
        if accepted:
            nu2[r], current = proposal, target
        record(NU2, accepted)
    return c, rho, nu2


def _prior_state(
    data: BlockedEvents,
    hp: Hyperparams,
    season: SeasonalityConfig,
    k: int,
    rng: np.random.Generator,
    nb: Optional[CarNeighborhood],
) -> ChainState:
    beta = sample_prior_beta(hp, rng)
    components = [sample_prior_component(hp, beta, rng) for _ in range(k)]
    c, rho, nu2 = sample_prior_car_hyper(rng, size=k - 1, hp=hp)
    pi = np.zeros((season.B, k - 1))
    for r in range(k - 1):
        pi[:, r] = sample_car_column(c[r], rho[r], nu2[r], nb, rng)
    return ChainState(
        labels=np.ones(data.n, dtype=np.int64),
        mu=np.array([comp.mu for comp in components]),
        sigma=np.array([comp.sigma for comp in components]),
        pi=pi,
        c=c,
        rho=rho,
        nu2=nu2,
        beta=beta,
        season=season,
    )


def _kmeans_state(
    data: BlockedEvents,
    hp: Hyperparams,
    season: SeasonalityConfig,
    k: int,
    rng: np.random.Generator,
) -> ChainState:
    centroids, assignment = kmeans2(data.xy, k, minit="++", seed=rng)
    fallback = np.linalg.inv(hp.h)
    mu = np.array(centroids, dtype=float)
    sigma = np.empty((k, 2, 2))
    for j in range(k):
        members = data.xy[assignment == j]
        if len(members) < 3:
            sigma[j] = fallback
            if len(members) == 0:
                mu[j] = hp.xi
            continue
        sigma[j] = _symmetrize(np.cov(members, rowvar=False)) + 1e-6 * np.eye(2)
    counts = np.zeros((season.B, k))
    np.add.at(counts, (data.blocks, assignment), 1.0)
    weights = (counts + 1.0) / (counts + 1.0).sum(axis=1, keepdims=True)
    log_w = np.log(weights)
    pi = log_w[:, :-1] - log_w[:, -1:]
    _, rho, _ = sample_prior_car_hyper(rng, size=k - 1, hp=hp)
    return ChainState(
        labels=assignment.astype(np.int64) + 1,
        mu=mu,
        sigma=sigma,
        pi=pi,
        c=pi.mean(axis=0),
        rho=rho,
        nu2=np.clip(pi.var(axis=0), 1e-2, hp.nu2_max),
        beta=sample_prior_beta(hp, rng),
        season=season,
    )


def initialize(
    events: EventsLike,
    hp: Hyperparams,
    season: SeasonalityConfig,
    k: int,
    rng: np.random.Generator,
    method: str = "prior",
    nb: Optional[CarNeighborhood] = None,
) -> ChainState:
    """A starting state: every parameter from its prior, or seeded by k-means."""
    data = as_blocked(events, season)
    if k > 1 and nb is None:
        nb = CarNeighborhood(season.B, season.d)
    if method == "kmeans" and data.n < k:
        warn(
            f"k-means initialization needs at least {k} events, got {data.n};"
            " drawing from the priors instead.",
            DemandMixWarning,
        )
        method = "prior"
    if method == "kmeans":
        state = _kmeans_state(data, hp, season, k, rng)
    else:
        state = _prior_state(data, hp, season, k, rng, nb)
    state.labels = update_labels(state, data, rng)
    return state


SweepStage = Callable[[ChainState, BlockedEvents, np.random.Generator], ChainState]


def sweep(
    state: ChainState,
    data: BlockedEvents,
    hp: Hyperparams,
    nb: Optional[CarNeighborhood],
    cfg: McmcConfig,
    rng: np.random.Generator,
    tracker: Optional[AcceptanceTracker] = None,
    steps: Optional[StepSizes] = None,
) -> None:
    """One full fixed-K iteration, in place."""
    steps = steps or StepSizes.from_config(cfg)
    state.labels = update_labels(state, data, rng)
    state.mu = update_means(state, data, hp, rng)
    state.sigma = update_covariances(state, data, hp, rng)
    state.beta = update_beta(state, hp, rng)
    if state.K > 1:
        state.pi = mh_update_weights(
            state, data, nb, cfg, rng, tracker=tracker, step=steps.pi
        )
        state.c, state.rho, state.nu2 = mh_update_car_hyper(
            state, nb, cfg, rng, tracker=tracker, steps=steps, hp=hp
        )


def _warn_outside(events: EventTable, region: Optional[StudyRegion]) -> None:
    if region is None or len(events) == 0:
        return
    outside = int((~region.contains(events.xy)).sum())
    if outside:
        warn(
            f"{outside} of {len(events)} events lie outside the study region; they"
            " still enter the likelihood.",
            DemandMixWarning,
        )


def run_chain(
    events: EventTable,
    region: Optional[StudyRegion],
    hp: Hyperparams,
    season: SeasonalityConfig,
    cfg: McmcConfig,
    k: int = DEFAULT_K,
    tracker: Optional[AcceptanceTracker] = None,
    stage: Optional[SweepStage] = None,
    initial: Optional[ChainState] = None,
) -> List[PosteriorDraw]:
    """
    Run one chain and return the draws kept after burn-in and thinning.

    `stage` runs before every sweep (the birth-death stage of the
    variable-K sampler); `tracker` receives acceptance counts.
    """
    _warn_outside(events, region)
    tracker = tracker if tracker is not None else AcceptanceTracker()
    rng = np.random.default_rng(cfg.seed)
    data = BlockedEvents.build(events, season)
    nb = CarNeighborhood(season.B, season.d) if (k > 1 or stage) else None
    if initial is None:
        state = initialize(data, hp, season, k, rng, method=cfg.init, nb=nb)
    else:
        state = initial
    steps = StepSizes.from_config(cfg)
    draws: List[PosteriorDraw] = []
    LOG.info(
        "Starting chain: %d events, K=%d, %d iterations (burn-in %d, thin %d), seed %d",
        data.n,
        state.K,
        cfg.n_iter,
        cfg.burn_in,
        cfg.thin,
        cfg.seed,
    )
    for iteration in range(1, cfg.n_iter + 1):
        try:
            if stage is not None:
                state = stage(state, data, rng)
            sweep(state, data, hp, nb, cfg, rng, tracker=tracker, steps=steps)
        except (NotPositiveDefiniteException, np.linalg.LinAlgError, ValueError) as ex:
            raise SamplerException(
                f"Sweep failed: {ex}", iteration=iteration, exception=ex
            ) from ex
        state.check_finite(iteration)

        if cfg.adapt and iteration <= cfg.burn_in:
            if iteration % cfg.adapt_interval == 0:
                steps.adapt(tracker)
        if iteration > cfg.burn_in and (iteration - cfg.burn_in) % cfg.thin == 0:
            draws.append(state.snapshot(iteration, keep_labels=cfg.store_labels))
        if cfg.log_every and iteration % cfg.log_every == 0:
            LOG.debug(
                "iteration %d/%d K=%d rates=%s", iteration, cfg.n_iter, state.K, tracker
            )
    tracker.log_summary(f"chain {cfg.seed}")
    return draws
