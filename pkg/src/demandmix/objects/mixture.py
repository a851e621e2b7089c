"""
Mixture-density mathematics.

A `MixtureState` holds K bivariate Gaussian components shared by all periods
and a B×K weight matrix: period t uses the weight row of its seasonal block.
Weight rows map to unconstrained coordinates through the multinomial logit
with the last component as reference category.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np
from attrs import define, field
from scipy.special import logsumexp

from demandmix.logging.exceptions import (
    DegenerateRegionException,
    DomainException,
    InvalidInputException,
    NotPositiveDefiniteException,
)
from demandmix.objects.geometry import SpatialPoint, StudyRegion, points_in_polygon
from demandmix.objects.season import SeasonalityConfig, block_of

__all__ = [
    "Component",
    "WeightMatrix",
    "MixtureState",
    "RegionNormalizedMixture",
    "gaussian_pdf2d",
    "log_gaussian_pdf2d",
    "mixture_density",
    "logit_transform",
    "inverse_logit",
    "normalize_to_region",
]

LOG_2PI = math.log(2.0 * math.pi)
ROW_SUM_TOLERANCE = 1e-12
MIN_REGION_MASS = 1e-10


def _as_vector(value) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(2)
    arr.setflags(write=False)
    return arr


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(2, 2)
    arr.setflags(write=False)
    return arr


def _check_symmetric(instance, attribute, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise InvalidInputException("Covariance entries must be finite.")
    if abs(value[0, 1] - value[1, 0]) > 1e-12 * max(1.0, float(np.abs(value).max())):
        raise InvalidInputException(f"Covariance is not symmetric: {value.tolist()}")


@define(slots=True, frozen=True)
class Component:
    """One bivariate Gaussian component (mean in km, covariance in km²)."""

    mu: np.ndarray = field(converter=_as_vector, eq=False)
    sigma: np.ndarray = field(
        converter=_as_matrix, validator=_check_symmetric, eq=False
    )

    def cholesky(self, index: Optional[int] = None) -> np.ndarray:
        """Lower Cholesky factor of sigma; raises if sigma is not positive definite."""
        a, b, c = self.sigma[0, 0], self.sigma[1, 0], self.sigma[1, 1]
        det = a * c - b * b
        if not (a > 0 and det > 0):
            name = f"component {index}" if index is not None else "component"
            raise NotPositiveDefiniteException(
                f"Covariance of {name} is not positive definite:"
                f" {self.sigma.tolist()}",
                component=index,
            )
        l11 = math.sqrt(a)
        l21 = b / l11
        l22 = math.sqrt(c - l21 * l21)
        return np.array([[l11, 0.0], [l21, l22]])

    def precision(self) -> np.ndarray:
        return np.linalg.inv(self.sigma)

    def to_list(self) -> list:
        return [*self.mu.tolist(), *self.sigma.ravel().tolist()]

    @classmethod
    def from_list(cls, args: Sequence[float]) -> "Component":
        return cls(mu=args[:2], sigma=args[2:6])


def log_gaussian_pdf2d(
    xy: np.ndarray, component: Component, index: Optional[int] = None
) -> np.ndarray:
    """log φ(s; μ, Σ) for every row of an (n, 2) array."""
    xy = np.atleast_2d(xy)
    chol = component.cholesky(index)
    dx = xy[:, 0] - component.mu[0]
    dy = xy[:, 1] - component.mu[1]
    z1 = dx / chol[0, 0]
    z2 = (dy - chol[1, 0] * z1) / chol[1, 1]
    log_det_half = math.log(chol[0, 0]) + math.log(chol[1, 1])
    return -LOG_2PI - log_det_half - 0.5 * (z1 * z1 + z2 * z2)


def gaussian_pdf2d(s: SpatialPoint, c: Component) -> float:
    return float(np.exp(log_gaussian_pdf2d(s.to_array(), c)[0]))


def _check_rows(instance, attribute, value: np.ndarray) -> None:
    if value.ndim != 2 or value.shape[1] < 1:
        raise InvalidInputException("Weights must be a B×K matrix.")
    if np.any(value < 0) or not np.all(np.isfinite(value)):
        raise InvalidInputException("Weights must be finite and nonnegative.")
    deviation = np.abs(value.sum(axis=1) - 1.0)
    if np.any(deviation > ROW_SUM_TOLERANCE):
        row = int(np.argmax(deviation))
        raise InvalidInputException(
            f"Weight row {row + 1} sums to {value[row].sum()!r}, not 1."
        )


def _as_weights(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    arr.setflags(write=False)
    return arr


@define(slots=True, frozen=True)
class WeightMatrix:
    """Per-block mixture weights p_{b,j}; rows live on the simplex."""

    w: np.ndarray = field(converter=_as_weights, validator=_check_rows, eq=False)

    @property
    def B(self) -> int:
        return self.w.shape[0]

    @property
    def K(self) -> int:
        return self.w.shape[1]

    @classmethod
    def uniform(cls, B: int, K: int) -> "WeightMatrix":
        return cls(np.full((B, K), 1.0 / K))


@define(slots=True, frozen=True)
class MixtureState:
    components: Tuple[Component, ...] = field(converter=tuple)
    weights: WeightMatrix
    season: SeasonalityConfig

    def __attrs_post_init__(self) -> None:
        if self.weights.K != len(self.components):
            raise InvalidInputException(
                f"Weights have {self.weights.K} columns for"
                f" {len(self.components)} components."
            )
        if self.weights.B != self.season.B:
            raise InvalidInputException(
                f"Weights have {self.weights.B} rows but the cycle length is"
                f" {self.season.B}."
            )

    @property
    def K(self) -> int:
        return len(self.components)

    def log_component_densities(self, xy: np.ndarray) -> np.ndarray:
        """(n, K) matrix of log φ(s_i; μ_j, Σ_j)."""
        xy = np.atleast_2d(xy)
        out = np.empty((len(xy), self.K))
        for j, c in enumerate(self.components):
            out[:, j] = log_gaussian_pdf2d(xy, c, index=j + 1)
        return out

    def log_density(self, xy: np.ndarray, periods: np.ndarray) -> np.ndarray:
        """log f_t(s) for paired points and periods (untruncated)."""
        blocks = block_of(np.asarray(periods), self.season) - 1
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights.w[blocks])
        return logsumexp(self.log_component_densities(xy) + log_w, axis=1)

    def density(self, xy: np.ndarray, periods: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(xy, periods))

    def block_densities(self, xy: np.ndarray) -> np.ndarray:
        """(n, B) matrix of f_b(s) for every block."""
        phi = np.exp(self.log_component_densities(xy))
        return phi @ self.weights.w.T

    def permuted(self, order: Sequence[int]) -> "MixtureState":
        order = list(order)
        return MixtureState(
            components=[self.components[j] for j in order],
            weights=WeightMatrix(self.weights.w[:, order]),
            season=self.season,
        )


def mixture_density(s: SpatialPoint, t: int, m: MixtureState) -> float:
    b = block_of(t, m.season) - 1
    total = 0.0
    for j, c in enumerate(m.components):
        total += m.weights.w[b, j] * math.exp(
            log_gaussian_pdf2d(s.to_array(), c, index=j + 1)[0]
        )
    return total


def logit_transform(p: np.ndarray) -> np.ndarray:
    """
    Multinomial logit with the last entry as reference: π_r = log(p_r / p_K).

    Works on a single probability vector or row-wise on a matrix.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0)):
        raise DomainException(
            "Multinomial logit needs strictly positive probabilities;"
            " clamp explicitly if zeros are expected."
        )
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-8):
        raise InvalidInputException("Probabilities must sum to 1.")
    log_p = np.log(p)
    return log_p[..., :-1] - log_p[..., -1:]


def inverse_logit(pi: np.ndarray) -> np.ndarray:
    """Inverse multinomial logit; stable for large |π|."""
    pi = np.asarray(pi, dtype=float)
    if not np.all(np.isfinite(pi)):
        raise InvalidInputException("Transformed weights must be finite.")
    z = np.concatenate([pi, np.zeros(pi.shape[:-1] + (1,))], axis=-1)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def normalize_to_region(m: MixtureState, region: StudyRegion) -> np.ndarray:
    """
    Per-block mass of the untruncated density inside the region (midpoint rule
    over grid cells whose centers lie in the polygon).
    """
    grid = region.integration_grid()
    if grid.size == 0:
        raise DegenerateRegionException(
            "No integration cell centers fall inside the region; refine the grid."
        )
    constants = m.block_densities(grid.centers).sum(axis=0) * grid.cell_area
    low = np.flatnonzero(constants < MIN_REGION_MASS)
    if low.size:
        raise DegenerateRegionException(
            f"Mixture mass inside the region is below {MIN_REGION_MASS} for blocks"
            f" {(low + 1).tolist()}.",
            blocks=(low + 1).tolist(),
        )
    return constants


@define(slots=True, frozen=True)
class RegionNormalizedMixture:
    """f_b(s)·1[s ∈ region] / constant_b."""

    mixture: MixtureState
    region: StudyRegion
    constants: np.ndarray = field(eq=False)

    @classmethod
    def build(cls, m: MixtureState, region: StudyRegion) -> "RegionNormalizedMixture":
        return cls(mixture=m, region=region, constants=normalize_to_region(m, region))

    def log_density(self, xy: np.ndarray, periods: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        periods = np.broadcast_to(np.asarray(periods), (len(xy),))
        blocks = block_of(periods, self.mixture.season) - 1
        out = self.mixture.log_density(xy, periods) - np.log(self.constants[blocks])
        inside = points_in_polygon(xy, self.region)
        return np.where(inside, out, -np.inf)

    def density(self, xy: np.ndarray, periods: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(xy, periods))

    def grid_density(self, period: int) -> np.ndarray:
        """Truncated density at the region's integration cell centers."""
        grid = self.region.integration_grid()
        b = block_of(period, self.mixture.season) - 1
        phi = np.exp(self.mixture.log_component_densities(grid.centers))
        return phi @ self.mixture.weights.w[b] / self.constants[b]
