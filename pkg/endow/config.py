"""Configuration management for endow."""

import logging
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from rich.logging import RichHandler


class Settings(BaseSettings):
    """Global settings."""

    model_config = SettingsConfigDict(env_prefix="ENDOW_")

    # Parallelism (ENDOW_THREADS)
    threads: int = Field(default=1, ge=1)

    # ODE integration
    rtol: float = 1e-10
    atol: float = 1e-12
    b3crit_tol: float = 1e-6

    # Simulation
    seed: int = 20240601
    dt: float = 1e-3
    npaths: int = 10_000
    chunk_size: int = 2048  # paths per RNG substream

    # Output
    output_dir: str = "outputs"

    # Cache
    cache_dir: str = ".endow_cache"
    cache_ttl: int = 30 * 86400  # 30 days
    cache_enabled: bool = True

    # Logging
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"


def setup_logging(level: str | None = None) -> None:
    """Attach a rich handler to the package logger."""
    logger = logging.getLogger("endow")
    logger.setLevel(level or settings.log_level)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(show_path=False, rich_tracebacks=False)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    logger.propagate = False


# Global instance
settings = Settings()
