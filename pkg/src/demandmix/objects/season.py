from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from stringcase import camelcase

from demandmix.logging.exceptions import InvalidInputException


class SeasonalityConfig(BaseModel):
    """
    Weekly block structure of the time axis.

    Periods `t` run over 1..T (2-hour bins by default); periods with the same
    position in a cycle of length `B` share mixture weights; `d` periods make
    a day.
    """

    model_config = ConfigDict(
        alias_generator=camelcase, populate_by_name=True, frozen=True
    )

    T: int = Field(default=336, ge=1)
    B: int = Field(default=84, ge=1)
    d: int = Field(default=12, ge=1)

    @model_validator(mode="after")
    def _check_cycle(self) -> "SeasonalityConfig":
        if self.B > self.T:
            raise ValueError(f"Block cycle B={self.B} exceeds horizon T={self.T}")
        if self.B % self.d != 0:
            raise ValueError(f"d={self.d} does not divide B={self.B}")
        return self

    @property
    def weeks(self) -> int:
        return -(-self.T // self.B)


def block_of(
    t: Union[int, np.ndarray], season: SeasonalityConfig
) -> Union[int, np.ndarray]:
    """Block index b in 1..B with b ≡ t (mod B); accepts scalars or arrays."""
    if np.isscalar(t):
        if not 1 <= t <= season.T:
            raise InvalidInputException(
                f"Period {t} is outside 1..{season.T} for this seasonality."
            )
        return int((t - 1) % season.B) + 1
    t = np.asarray(t, dtype=int)
    if t.size and (t.min() < 1 or t.max() > season.T):
        raise InvalidInputException(
            f"Periods must lie in 1..{season.T}; got range"
            f" {int(t.min())}..{int(t.max())}."
        )
    return (t - 1) % season.B + 1
