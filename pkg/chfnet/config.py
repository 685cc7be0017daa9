from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    lut_path: Path = Field(Path("data/sample_lut.csv"), validation_alias="CHF_LUT_PATH")
    output_dir: Path = Field(Path("runs/latest"), validation_alias="CHF_OUTPUT_DIR")
    model_path: Optional[Path] = Field(None, validation_alias="CHF_MODEL_PATH")
    log_level: str = Field("INFO", validation_alias="CHF_LOG_LEVEL")

    @model_validator(mode='after')
    def _validate_log_level(cls, values: 'Settings') -> 'Settings':
        level = values.log_level.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"CHF_LOG_LEVEL must be a logging level name, got {values.log_level!r}.")
        values.log_level = level
        return values

    @property
    def served_model_path(self) -> Path:
        if self.model_path is not None:
            return self.model_path
        return self.output_dir / "models" / "base.chfm"

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
