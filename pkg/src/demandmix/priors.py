"""
Priors: data-derived hyperparameters for component means and covariances and
the conditionally autoregressive (CAR) prior on transformed weights.

Wishart(n, V) always means the distribution with mean nV, the convention of
`scipy.stats.wishart`; "Wishart(2α, (2β)⁻¹)" therefore has mean αβ⁻¹.
"""

import math
from functools import lru_cache
from typing import Iterable, Optional, Protocol, Tuple, Union

import numpy as np
from attrs import define, field
from scipy.linalg import cholesky, solve_triangular
from scipy.stats import multivariate_normal, norm, wishart

from demandmix.logging.exceptions import (
    DegenerateDataException,
    InvalidInputException,
    ProprietyException,
)
from demandmix.objects.events import Event, EventTable
from demandmix.objects.mixture import Component, MixtureState

__all__ = [
    "Hyperparams",
    "CarState",
    "CarNeighborhood",
    "hyperparams_from_data",
    "car_conditional",
    "car_joint_precision",
    "car_log_density",
    "log_prior",
    "log_prior_weight_space",
    "sample_prior_component",
    "sample_prior_beta",
    "sample_prior_car_hyper",
    "sample_car_column",
]

ALPHA = 3.0
G = 1.0
RHO_MAX = 0.25
C_PRIOR_VARIANCE = 1e4
NU2_MAX = 1e4
LOG_2PI = math.log(2.0 * math.pi)


def _frozen(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return arr


def _positive_diagonal(instance, attribute, value: np.ndarray) -> None:
    if value.shape != (2, 2) or value[0, 1] != 0 or value[1, 0] != 0:
        raise InvalidInputException(f"{attribute.name} must be a 2×2 diagonal matrix")
    if not (value[0, 0] > 0 and value[1, 1] > 0):
        raise InvalidInputException(f"{attribute.name} must have a positive diagonal")


def _positive_scale(instance, attribute, value: float) -> None:
    if not 0 < value <= attribute.default:
        raise InvalidInputException(
            f"{attribute.name} must lie in (0, {attribute.default}]: {value}"
        )


@define(slots=True, frozen=True)
class Hyperparams:
    xi: np.ndarray = field(converter=_frozen, eq=False)
    kappa: np.ndarray = field(converter=_frozen, validator=_positive_diagonal, eq=False)
    h: np.ndarray = field(converter=_frozen, validator=_positive_diagonal, eq=False)
    alpha: float = ALPHA
    g: float = G
    c_variance: float = field(default=C_PRIOR_VARIANCE, validator=_positive_scale)
    nu2_max: float = field(default=NU2_MAX, validator=_positive_scale)

    @property
    def mean_covariance(self) -> np.ndarray:
        return np.linalg.inv(self.kappa)


def hyperparams_from_data(events: Union[EventTable, Iterable[Event]]) -> Hyperparams:
    """ξ from the per-dimension medians, κ and h from the per-dimension ranges."""
    table = events if isinstance(events, EventTable) else EventTable.from_events(events)
    if len(table) < 2:
        raise DegenerateDataException("At least two events are needed for priors.")
    ranges = table.xy.max(axis=0) - table.xy.min(axis=0)
    if np.any(ranges <= 0):
        raise DegenerateDataException(
            f"Event locations have zero range in dimension(s)"
            f" {(np.flatnonzero(ranges <= 0) + 1).tolist()}."
        )
    r2 = ranges**2
    return Hyperparams(
        xi=np.median(table.xy, axis=0),
        kappa=np.diag(1.0 / r2),
        h=np.diag(10.0 / r2),
    )


@lru_cache(maxsize=32)
def _neighbor_table(B: int, d: int) -> np.ndarray:
    b = np.arange(B)
    table = np.column_stack([(b - 1) % B, (b + 1) % B, (b - d) % B, (b + d) % B])
    table.setflags(write=False)
    return table


@lru_cache(maxsize=32)
def _adjacency_eigenvalues(B: int, d: int) -> np.ndarray:
    adjacency = np.zeros((B, B))
    for b, row in enumerate(_neighbor_table(B, d)):
        for nb in row:
            adjacency[b, nb] += 1.0
    values = np.linalg.eigvalsh(adjacency)
    values.setflags(write=False)
    return values


def _cycle_check(instance, attribute, value) -> None:
    if instance.B <= 2 * instance.d:
        raise InvalidInputException(
            f"CAR neighborhoods need B > 2d (B={instance.B}, d={instance.d})."
        )


@define(slots=True, frozen=True)
class CarNeighborhood:
    """Circular lag-1 and lag-d neighbors on the block cycle."""

    B: int = field(converter=int)
    d: int = field(converter=int, validator=_cycle_check)

    def neighbors(self, b: int) -> np.ndarray:
        """One-based neighbors {b−1, b+1, b−d, b+d} of one-based block b."""
        if not 1 <= b <= self.B:
            raise InvalidInputException(f"Block {b} is outside 1..{self.B}")
        return _neighbor_table(self.B, self.d)[b - 1] + 1

    @property
    def table(self) -> np.ndarray:
        """(B, 4) zero-based neighbor indices."""
        return _neighbor_table(self.B, self.d)

    @property
    def adjacency(self) -> np.ndarray:
        adjacency = np.zeros((self.B, self.B))
        for b, row in enumerate(self.table):
            for nb in row:
                adjacency[b, nb] += 1.0
        return adjacency

    @property
    def adjacency_eigenvalues(self) -> np.ndarray:
        return _adjacency_eigenvalues(self.B, self.d)

    def neighbor_sum(self, values: np.ndarray) -> np.ndarray:
        """(W v) for a length-B vector or column-wise for a (B, m) matrix."""
        return values[self.table].sum(axis=1)


def _vector(value) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


def _matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return arr


@define(slots=True, frozen=True)
class CarState:
    pi: np.ndarray = field(converter=_matrix, eq=False)
    c: np.ndarray = field(converter=_vector, eq=False)
    rho: np.ndarray = field(converter=_vector, eq=False)
    nu2: np.ndarray = field(converter=_vector, eq=False)

    def __attrs_post_init__(self) -> None:
        k1 = self.pi.shape[1] if self.pi.ndim == 2 else -1
        if k1 < 0 or not (len(self.c) == len(self.rho) == len(self.nu2) == k1):
            raise InvalidInputException(
                "CAR state needs a B×(K−1) π matrix and K−1 values of c, ρ, ν²."
            )
        if not np.all(np.isfinite(self.pi)):
            raise InvalidInputException("Transformed weights must be finite.")

    @property
    def columns(self) -> int:
        return len(self.c)

    def in_support(self) -> bool:
        return bool(
            np.all((self.rho >= 0) & (self.rho < RHO_MAX))
            and np.all((self.nu2 > 0) & (self.nu2 <= NU2_MAX))
        )

    @classmethod
    def empty(cls, B: int) -> "CarState":
        return cls(pi=np.zeros((B, 0)), c=[], rho=[], nu2=[])


def car_conditional(
    b: int, r: int, state: CarState, nb: CarNeighborhood
) -> Tuple[float, float]:
    """Conditional mean and variance of π_{b,r} given the rest of column r."""
    column = state.pi[:, r - 1]
    c = state.c[r - 1]
    nbrs = nb.neighbors(b) - 1
    mean = c + state.rho[r - 1] * float(np.sum(column[nbrs] - c))
    return mean, float(state.nu2[r - 1])


def car_precision(rho: float, nu2: float, nb: CarNeighborhood) -> np.ndarray:
    if not 0 <= rho < RHO_MAX:
        raise ProprietyException(
            f"CAR persistence ρ={rho} is outside [0, {RHO_MAX}); the joint prior"
            " would be improper."
        )
    if not nu2 > 0:
        raise InvalidInputException(f"Conditional variance must be positive: {nu2}")
    return (np.eye(nb.B) - rho * nb.adjacency) / nu2


def car_joint_precision(r: int, state: CarState, nb: CarNeighborhood) -> np.ndarray:
    return car_precision(float(state.rho[r - 1]), float(state.nu2[r - 1]), nb)


def car_log_density(
    x: np.ndarray, c: float, rho: float, nu2: float, nb: CarNeighborhood
) -> float:
    """log N_B(x; c·1, Q⁻¹) with Q = (I − ρW)/ν², via the eigenvalues of W."""
    if not (0 <= rho < RHO_MAX and nu2 > 0):
        return -math.inf
    v = np.asarray(x, dtype=float) - c
    quad = (float(v @ v) - rho * float(v @ nb.neighbor_sum(v))) / nu2
    log_det = float(np.sum(np.log1p(-rho * nb.adjacency_eigenvalues)))
    log_det -= nb.B * math.log(nu2)
    return -0.5 * nb.B * LOG_2PI + 0.5 * log_det - 0.5 * quad


def log_prior_c(c: float, variance: float = C_PRIOR_VARIANCE) -> float:
    return float(norm.logpdf(c, loc=0.0, scale=math.sqrt(variance)))


def log_prior_rho(rho: float) -> float:
    return math.log(1.0 / RHO_MAX) if 0 <= rho < RHO_MAX else -math.inf


def log_prior_nu2(nu2: float, upper: float = NU2_MAX) -> float:
    return -math.log(upper) if 0 < nu2 <= upper else -math.inf


class ParameterSet(Protocol):
    mixture: MixtureState
    car: CarState
    beta: np.ndarray


def log_prior(draw: ParameterSet, hp: Hyperparams, nb: CarNeighborhood) -> float:
    """Joint log prior density of one full parameter set (−inf off support)."""
    total = 0.0
    mean_cov = hp.mean_covariance
    beta = np.asarray(draw.beta)
    sigma_scale = np.linalg.inv(2.0 * beta)
    for component in draw.mixture.components:
        total += float(multivariate_normal.logpdf(component.mu, hp.xi, mean_cov))
        total += float(
            wishart.logpdf(component.precision(), df=2 * hp.alpha, scale=sigma_scale)
        )
    total += float(wishart.logpdf(beta, df=2 * hp.g, scale=np.linalg.inv(2.0 * hp.h)))

    car = draw.car
    for r in range(car.columns):
        rho, nu2, c = float(car.rho[r]), float(car.nu2[r]), float(car.c[r])
        term = log_prior_rho(rho) + log_prior_nu2(nu2, hp.nu2_max)
        if term == -math.inf:
            return -math.inf
        column = car_log_density(car.pi[:, r], c, rho, nu2, nb)
        total += term + log_prior_c(c, hp.c_variance) + column
    return total


def log_prior_weight_space(
    draw: ParameterSet, hp: Hyperparams, nb: CarNeighborhood
) -> float:
    """
    log_prior expressed as a density over weights: adds log|∂π/∂p| = −Σ log p.
    """
    base = log_prior(draw, hp, nb)
    if base == -math.inf or draw.car.columns == 0:
        return base
    return base - float(np.sum(np.log(draw.mixture.weights.w)))


def sample_prior_component(
    hp: Hyperparams, beta: np.ndarray, rng: np.random.Generator
) -> Component:
    """μ ~ Normal(ξ, κ⁻¹), Σ⁻¹ ~ Wishart(2α, (2β)⁻¹)."""
    mu = rng.multivariate_normal(hp.xi, hp.mean_covariance)
    precision = wishart.rvs(
        df=2 * hp.alpha, scale=np.linalg.inv(2.0 * np.asarray(beta)), random_state=rng
    )
    sigma = np.linalg.inv(precision)
    return Component(mu=mu, sigma=0.5 * (sigma + sigma.T))


def sample_prior_beta(hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    beta = wishart.rvs(df=2 * hp.g, scale=np.linalg.inv(2.0 * hp.h), random_state=rng)
    return 0.5 * (beta + beta.T)


def sample_prior_car_hyper(
    rng: np.random.Generator,
    size: Optional[int] = None,
    hp: Optional[Hyperparams] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (c, ρ, ν²) drawn from N(0, 10⁴), U(0, 0.25), U(0, 10⁴), or from the
    narrower scales of `hp`.
    """
    c_variance = C_PRIOR_VARIANCE if hp is None else hp.c_variance
    nu2_max = NU2_MAX if hp is None else hp.nu2_max
    c = rng.normal(0.0, math.sqrt(c_variance), size=size)
    rho = rng.uniform(0.0, RHO_MAX, size=size)
    nu2 = nu2_max - rng.uniform(0.0, nu2_max, size=size)
    return np.asarray(c, dtype=float), np.asarray(rho, dtype=float), np.asarray(
        nu2, dtype=float
    )


def sample_car_column(
    c: float, rho: float, nu2: float, nb: CarNeighborhood, rng: np.random.Generator
) -> np.ndarray:
    """One draw of (π_{1,r}..π_{B,r}) from the joint CAR normal N(c·1, Q⁻¹)."""
    lower = cholesky(car_precision(rho, nu2, nb), lower=True)
    z = rng.standard_normal(nb.B)
    return c + solve_triangular(lower, z, lower=True, trans="T")
