"""Run configuration files and environment settings."""

import logging
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from stringcase import camelcase

from demandmix.baselines import HISTORY_PRESETS
from demandmix.evaluation.coverage import ResponseTimeConfig
from demandmix.logging.exceptions import ConfigException
from demandmix.objects.season import SeasonalityConfig
from demandmix.sampling.birth_death import BirthDeathConfig
from demandmix.sampling.fixed_k import DEFAULT_K, McmcConfig
from demandmix.serialization.draw_serializer import hash_obj

LOG = logging.getLogger(__name__)

HOURS_PER_DAY = 24.0
DEFAULT_KDE_CANDIDATES = [
    (h1, h2) for h1 in (0.25, 0.5, 1.0, 2.0) for h2 in (0.25, 0.5, 1.0, 2.0)
]


class ConfigBase(BaseModel):
    model_config = ConfigDict(
        alias_generator=camelcase, populate_by_name=True, frozen=True
    )


class BinningConfig(ConfigBase):
    """Timestamps map to period floor((ts − epoch) / width) + 1."""

    epoch: datetime = datetime(1970, 1, 1)
    bin_width_hours: float = Field(default=2.0, gt=0)


class RunConfig(ConfigBase):
    k: int = Field(default=DEFAULT_K, ge=1)
    variable_k: bool = False
    season: SeasonalityConfig = Field(default_factory=SeasonalityConfig)
    mcmc: McmcConfig = Field(default_factory=McmcConfig)
    birth_death: BirthDeathConfig = Field(default_factory=BirthDeathConfig)
    region: Optional[str] = None
    grid_resolution: float = Field(default=0.5, gt=0)
    history_rule: str = "preceding-4-weeks"
    medic_cell_size: float = Field(default=1.0, gt=0)
    kde_candidates: List[Tuple[float, float]] = Field(
        default_factory=lambda: list(DEFAULT_KDE_CANDIDATES), min_length=1
    )
    evaluation: ResponseTimeConfig = Field(default_factory=ResponseTimeConfig)
    binning: BinningConfig = Field(default_factory=BinningConfig)
    n_chains: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        season = self.season
        if (self.k > 1 or self.variable_k) and season.B <= 2 * season.d:
            raise ValueError(
                f"CAR neighborhoods need B > 2d (B={season.B}, d={season.d})"
            )
        per_day = HOURS_PER_DAY / self.binning.bin_width_hours
        if abs(per_day - season.d) > 1e-9:
            raise ValueError(
                f"{self.binning.bin_width_hours}-hour bins give {per_day:g} periods"
                f" per day but d={season.d}"
            )
        if self.history_rule not in HISTORY_PRESETS:
            raise ValueError(
                f"unknown history rule '{self.history_rule}';"
                f" choose one of {sorted(HISTORY_PRESETS)}"
            )
        if any(h <= 0 for pair in self.kde_candidates for h in pair):
            raise ValueError("KDE bandwidth candidates must be positive")
        if self.variable_k and self.k > self.birth_death.k_max:
            LOG.warning(
                "Initial K=%d exceeds k_max=%d and will be clipped",
                self.k,
                self.birth_death.k_max,
            )
        return self

    def region_path(self, config_dir: Union[str, Path] = ".") -> Optional[Path]:
        """The region file, relative paths taken from the config file's folder."""
        if self.region is None:
            return None
        path = Path(self.region)
        return path if path.is_absolute() else Path(config_dir) / path


class Settings(BaseSettings):
    """Process-level settings read from `DEMANDMIX_*` environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="demandmix_",
        extra="ignore",
    )

    threads: int = Field(default=1, ge=1)
    log_level: str = "INFO"


def parse_config(text: str) -> RunConfig:
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as ex:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in e['loc']) or 'config'}: {e['msg']}"
            for e in ex.errors()
        )
        raise ConfigException(f"Invalid run configuration: {problems}", ex) from ex


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as ex:
        raise ConfigException(f"Cannot read run configuration {path}", ex) from ex
    cfg = parse_config(text)
    LOG.info("Loaded run configuration %s (hash %s)", path, config_hash(cfg))
    return cfg


def config_hash(cfg: RunConfig) -> str:
    return hash_obj(cfg.model_dump(mode="json"))
