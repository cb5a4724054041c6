"""Settings and logging setup."""

import os
import sys
from typing import Literal, get_args

import dotenv
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from gaitstrip.modules.errors import ConfigError

dotenv.load_dotenv()

LogLevel = Literal["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]
LOG_LEVELS: tuple[str, ...] = get_args(LogLevel)


class Settings(BaseModel):
    """Runtime knobs read from the environment (or a .env file)."""

    model_config = ConfigDict(frozen=True)

    log_level: LogLevel = "INFO"
    gem_p: float = Field(default=6.5, ge=1.0)
    embed_dim: int = Field(default=128, ge=1)
    leaky_slope: float = Field(default=0.01, ge=0.0, lt=1.0)
    distance_chunk: int = Field(default=256, ge=1)


def load_settings() -> Settings:
    """Build Settings from GAITSTRIP_* environment variables."""
    raw = {
        "log_level": os.getenv("GAITSTRIP_LOG_LEVEL", "INFO").upper(),
        "gem_p": os.getenv("GAITSTRIP_GEM_P", "6.5"),
        "embed_dim": os.getenv("GAITSTRIP_EMBED_DIM", "128"),
        "leaky_slope": os.getenv("GAITSTRIP_LEAKY_SLOPE", "0.01"),
        "distance_chunk": os.getenv("GAITSTRIP_DISTANCE_CHUNK", "256"),
    }
    try:
        return Settings.model_validate(raw)
    except ValidationError as e:
        msg = f"invalid GAITSTRIP_* environment: {e}"
        raise ConfigError(msg) from e


def configure_logging(level: str | None = None) -> None:
    """Configure a single stderr sink for the library and CLI."""
    if level is None:
        level = load_settings().log_level
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format="{time} | {level} | {message}")
