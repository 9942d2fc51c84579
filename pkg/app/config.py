"""Configuration management for the toolkit."""
import logging

from pydantic_settings import BaseSettings, SettingsConfigDict

from app.errors import ConfigurationError


class Settings(BaseSettings):
    """Process-wide settings, read from FPNR_* environment variables and .env."""

    model_config = SettingsConfigDict(
        env_prefix="FPNR_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Worker cap for bench cells and data-parallel training shards
    THREADS: int = 1

    LOG_LEVEL: str = "INFO"

    # Assert finite outputs after every forward op
    DEBUG_FINITE: bool = False

    # Default network precision: "float64" or "float32"
    PRECISION: str = "float64"

    # Largest image (height * width) the readers accept
    MAX_PIXELS: int = 2 ** 28

    def validate(self) -> None:
        """Validate that all configuration values are usable."""
        if self.THREADS < 1:
            raise ConfigurationError(f"FPNR_THREADS must be >= 1, got {self.THREADS}")

        if self.PRECISION not in ("float64", "float32"):
            raise ConfigurationError(
                f"Invalid FPNR_PRECISION: {self.PRECISION}. Must be 'float64' or 'float32'"
            )

        if not isinstance(logging.getLevelName(self.LOG_LEVEL.upper()), int):
            raise ConfigurationError(f"Invalid FPNR_LOG_LEVEL: {self.LOG_LEVEL}")

        if self.MAX_PIXELS < 1:
            raise ConfigurationError("FPNR_MAX_PIXELS must be positive")


config = Settings()
