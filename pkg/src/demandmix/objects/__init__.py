"""Domain objects: locations, regions, seasonality, events and mixture states."""

from demandmix.objects.events import Event, EventTable
from demandmix.objects.geometry import (
    GridSpec,
    SpatialPoint,
    StudyRegion,
    point_in_polygon,
    points_in_polygon,
)
from demandmix.objects.mixture import (
    Component,
    MixtureState,
    RegionNormalizedMixture,
    WeightMatrix,
    gaussian_pdf2d,
    inverse_logit,
    logit_transform,
    mixture_density,
    normalize_to_region,
)
from demandmix.objects.season import SeasonalityConfig, block_of

__all__ = [
    "Component",
    "Event",
    "EventTable",
    "GridSpec",
    "MixtureState",
    "RegionNormalizedMixture",
    "SeasonalityConfig",
    "SpatialPoint",
    "StudyRegion",
    "WeightMatrix",
    "block_of",
    "gaussian_pdf2d",
    "inverse_logit",
    "logit_transform",
    "mixture_density",
    "normalize_to_region",
    "point_in_polygon",
    "points_in_polygon",
]
