import math
from typing import List, Sequence, Tuple

import numpy as np
from attrs import define, field

from demandmix.logging.exceptions import InvalidInputException

__all__ = [
    "SpatialPoint",
    "StudyRegion",
    "IntegrationGrid",
    "GridSpec",
    "point_in_polygon",
    "points_in_polygon",
    "l1_distance_to_nearest",
]

# relative tolerance for "point lies on an edge"
_EDGE_TOLERANCE = 1e-12


def _finite(instance, attribute, value) -> None:
    if not math.isfinite(value):
        raise InvalidInputException(f"{attribute.name} must be finite, got {value}")


@define(slots=True, frozen=True)
class SpatialPoint:
    """A planar location in kilometres."""

    x: float = field(converter=float, validator=_finite)
    y: float = field(converter=float, validator=_finite)

    @classmethod
    def from_list(cls, args: Sequence[float]) -> "SpatialPoint":
        return cls(x=args[0], y=args[1])

    def to_list(self) -> List[float]:
        return [self.x, self.y]

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of two closed segments."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(
            a[1], b[1]
        ) <= c[1] <= max(a[1], b[1])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 * d3 * d4 != 0:
        return True
    if d1 == 0 and on_segment(q1, q2, p1):
        return True
    if d2 == 0 and on_segment(q1, q2, p2):
        return True
    if d3 == 0 and on_segment(p1, p2, q1):
        return True
    return d4 == 0 and on_segment(p1, p2, q2)


def _polygon_converter(value) -> np.ndarray:
    vertices = np.array(
        [v.to_list() if isinstance(v, SpatialPoint) else list(v) for v in value],
        dtype=float,
    )
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise InvalidInputException("Polygon vertices must be (x, y) pairs.")
    # closed implicitly
    if len(vertices) > 1 and np.array_equal(vertices[0], vertices[-1]):
        vertices = vertices[:-1]
    vertices.setflags(write=False)
    return vertices


def _validate_polygon(instance, attribute, vertices: np.ndarray) -> None:
    if len(vertices) < 3:
        raise InvalidInputException("A study region needs at least 3 vertices.")
    if not np.all(np.isfinite(vertices)):
        raise InvalidInputException("Polygon vertices must be finite.")
    if abs(_shoelace(vertices)) <= 0:
        raise InvalidInputException("Polygon has zero area.")
    n = len(vertices)
    for i in range(n):
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(
                vertices[i], vertices[(i + 1) % n], vertices[j], vertices[(j + 1) % n]
            ):
                raise InvalidInputException(
                    f"Polygon is self-intersecting (edges {i} and {j})."
                )


def _positive(instance, attribute, value) -> None:
    if not value > 0:
        raise InvalidInputException(f"{attribute.name} must be positive, got {value}")


def _shoelace(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@define(slots=True, frozen=True)
class IntegrationGrid:
    """
    Midpoint-rule grid over the bounding box of a region.

    Only cells whose centers lie inside the polygon carry mass; `centers`,
    `ix` and `iy` describe those cells.
    """

    origin: Tuple[float, float]
    resolution: float
    nx: int
    ny: int
    centers: np.ndarray
    ix: np.ndarray
    iy: np.ndarray

    @property
    def cell_area(self) -> float:
        return self.resolution**2

    @property
    def size(self) -> int:
        return len(self.centers)

    def edges(self, dimension: int) -> np.ndarray:
        count = self.nx if dimension == 0 else self.ny
        return self.origin[dimension] + self.resolution * np.arange(count + 1)

    def column_index(self, dimension: int) -> np.ndarray:
        return self.ix if dimension == 0 else self.iy


@define(slots=True, frozen=True)
class StudyRegion:
    """A simple polygon in km with the resolution used for numeric integration."""

    polygon: np.ndarray = field(
        converter=_polygon_converter, validator=_validate_polygon, eq=False
    )
    grid_resolution: float = field(default=0.5, converter=float, validator=_positive)
    _grid: List[IntegrationGrid] = field(
        factory=list, init=False, repr=False, eq=False
    )

    @classmethod
    def box(
        cls, xmin: float, ymin: float, xmax: float, ymax: float, **kwargs
    ) -> "StudyRegion":
        return cls(
            polygon=[(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)], **kwargs
        )

    @property
    def area(self) -> float:
        return abs(_shoelace(self.polygon))

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        mins = self.polygon.min(axis=0)
        maxs = self.polygon.max(axis=0)
        return float(mins[0]), float(mins[1]), float(maxs[0]), float(maxs[1])

    @property
    def diameter(self) -> float:
        xmin, ymin, xmax, ymax = self.bounds
        return math.hypot(xmax - xmin, ymax - ymin)

    def with_resolution(self, grid_resolution: float) -> "StudyRegion":
        return StudyRegion(polygon=self.polygon, grid_resolution=grid_resolution)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        return points_in_polygon(xy, self)

    def integration_grid(self) -> IntegrationGrid:
        """The midpoint grid, built on first use and reused afterwards."""
        if self._grid:
            return self._grid[0]
        xmin, ymin, xmax, ymax = self.bounds
        h = self.grid_resolution
        nx = max(1, int(math.ceil((xmax - xmin) / h - 1e-9)))
        ny = max(1, int(math.ceil((ymax - ymin) / h - 1e-9)))
        gx = xmin + h * (np.arange(nx) + 0.5)
        gy = ymin + h * (np.arange(ny) + 0.5)
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        ix, iy = ix.ravel(), iy.ravel()
        centers = np.column_stack([gx[ix], gy[iy]])
        inside = points_in_polygon(centers, self)
        grid = IntegrationGrid(
            origin=(xmin, ymin),
            resolution=h,
            nx=nx,
            ny=ny,
            centers=centers[inside],
            ix=ix[inside],
            iy=iy[inside],
        )
        self._grid.append(grid)
        return grid


def _on_boundary(xy: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.abs(vertices).max()))
    tol = _EDGE_TOLERANCE * scale
    x, y = xy[:, 0], xy[:, 1]
    hit = np.zeros(len(xy), dtype=bool)
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        length = math.hypot(x2 - x1, y2 - y1)
        within = (
            (x >= min(x1, x2) - tol)
            & (x <= max(x1, x2) + tol)
            & (y >= min(y1, y2) - tol)
            & (y <= max(y1, y2) + tol)
        )
        hit |= within & (np.abs(cross) <= tol * length)
    return hit


def points_in_polygon(xy: np.ndarray, region: StudyRegion) -> np.ndarray:
    """
    Vectorised even-odd ray casting; points on an edge or vertex count as inside.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    vertices = region.polygon
    x, y = xy[:, 0], xy[:, 1]
    inside = np.zeros(len(xy), dtype=bool)
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        straddles = (y1 > y) != (y2 > y)
        if not straddles.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (x < x_cross)
    return inside | _on_boundary(xy, vertices)


def point_in_polygon(s: SpatialPoint, region: StudyRegion) -> bool:
    return bool(points_in_polygon(s.to_array()[None, :], region)[0])


def l1_distance_to_nearest(xy: np.ndarray, bases: np.ndarray) -> np.ndarray:
    """Manhattan distance from every point to its closest base."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    bases = np.atleast_2d(np.asarray(bases, dtype=float))
    best = np.full(len(xy), np.inf)
    for bx, by in bases:
        np.minimum(best, np.abs(xy[:, 0] - bx) + np.abs(xy[:, 1] - by), out=best)
    return best


def _positive_int(instance, attribute, value) -> None:
    if value < 1:
        raise InvalidInputException(f"{attribute.name} must be at least 1")


@define(slots=True, frozen=True)
class GridSpec:
    """A regular forecast grid (MEDIC cells)."""

    origin: SpatialPoint
    cell_size: float = field(default=1.0, converter=float, validator=_positive)
    nx: int = field(default=1, converter=int, validator=_positive_int)
    ny: int = field(default=1, converter=int, validator=_positive_int)

    @classmethod
    def covering(cls, region: StudyRegion, cell_size: float = 1.0) -> "GridSpec":
        xmin, ymin, xmax, ymax = region.bounds
        return cls(
            origin=SpatialPoint(xmin, ymin),
            cell_size=cell_size,
            nx=max(1, int(math.ceil((xmax - xmin) / cell_size - 1e-9))),
            ny=max(1, int(math.ceil((ymax - ymin) / cell_size - 1e-9))),
        )

    @property
    def cell_area(self) -> float:
        return self.cell_size**2

    @property
    def shape(self) -> Tuple[int, int]:
        return self.nx, self.ny

    def cell_index(self, xy: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell indices of points and a mask of the points falling on the grid."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        ix = np.floor((xy[:, 0] - self.origin.x) / self.cell_size).astype(int)
        iy = np.floor((xy[:, 1] - self.origin.y) / self.cell_size).astype(int)
        valid = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        return ix, iy, valid

    def centers(self) -> np.ndarray:
        """Cell centers, ordered like `values.ravel()` of an (nx, ny) array."""
        gx = self.origin.x + self.cell_size * (np.arange(self.nx) + 0.5)
        gy = self.origin.y + self.cell_size * (np.arange(self.ny) + 0.5)
        cx, cy = np.meshgrid(gx, gy, indexing="ij")
        return np.column_stack([cx.ravel(), cy.ravel()])
