from enum import Enum
from typing import Union

from demandmix.logging.exceptions import InvalidUnitException

__all__ = [
    "Units",
    "get_units_from_string",
    "get_scale_factor",
    "get_scale_factor_to_km",
]


class Units(Enum):
    mm = "mm"
    cm = "cm"
    m = "m"
    km = "km"
    inches = "in"
    feet = "ft"
    yards = "yd"
    miles = "mi"


UNITS_STRINGS = {
    Units.mm: ["mm", "millimeters", "millimetres"],
    Units.cm: ["cm", "centimetre", "centimeter", "centimetres", "centimeters"],
    Units.m: ["m", "meter", "meters", "metre", "metres"],
    Units.km: ["km", "kilometer", "kilometre", "kilometers", "kilometres"],
    Units.inches: ["in", "inch", "inches"],
    Units.feet: ["ft", "foot", "feet"],
    Units.yards: ["yd", "yard", "yards"],
    Units.miles: ["mi", "mile", "miles"],
}


UNIT_SCALE = {
    Units.mm: 1e-6,
    Units.cm: 1e-5,
    Units.m: 1e-3,
    Units.km: 1.0,
    Units.inches: 0.0254e-3,
    Units.feet: 0.3048e-3,
    Units.yards: 0.9144e-3,
    Units.miles: 1.609344,
}
"""Unit scaling factor to kilometres"""


def get_units_from_string(unit: str) -> Units:
    if not isinstance(unit, str):
        raise InvalidUnitException(unit)
    unit = str.lower(unit)
    for name, alternates in UNITS_STRINGS.items():
        if unit in alternates:
            return name
    raise InvalidUnitException(unit)


def get_scale_factor(from_units: Units, to_units: Units) -> float:
    """Returns a scalar to convert distance values from one unit system to another"""
    return get_scale_factor_to_km(from_units) / get_scale_factor_to_km(to_units)


def get_scale_factor_to_km(from_units: Union[Units, str]) -> float:
    """Returns a scalar to convert planar coordinates to kilometres"""
    if isinstance(from_units, str):
        from_units = get_units_from_string(from_units)
    return UNIT_SCALE[from_units]
