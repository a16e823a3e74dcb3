# src/utils/config.py
"""
Configuration Management

Process-level settings from environment variables (or a .env file) and the
run configuration file loader.

Version: 1.0.0
"""
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.models.config import RunConfig
from src.utils.constants import (
    DEFAULT_OUTPUT_ROOT,
    VALID_LOG_FORMATS,
    VALID_LOG_LEVELS,
)
from src.utils.errors import ArtifactError, ConfigValidationError
from src.utils.logging import get_logger

# Application version - single source of truth
__version__ = "1.0.0"

logger = get_logger(__name__)


class Settings(BaseSettings):
    """
    Process settings from environment variables.

    Prefixed with FLIER_, e.g. FLIER_OUTPUT_ROOT=/data/flier.
    """

    model_config = SettingsConfigDict(
        env_prefix="FLIER_", env_file=".env", extra="ignore"
    )

    OUTPUT_ROOT: str = Field(
        default=DEFAULT_OUTPUT_ROOT, description="Root directory for artifacts"
    )
    LOG_LEVEL: str = Field(default="INFO", description="Logging level")
    LOG_FORMAT: str = Field(default="json", description="json or console")

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level is valid."""
        if v.upper() not in VALID_LOG_LEVELS:
            raise ValueError(
                f"LOG_LEVEL must be one of: {', '.join(sorted(VALID_LOG_LEVELS))}"
            )
        return v.upper()

    @field_validator("LOG_FORMAT")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        """Validate log renderer name."""
        if v.lower() not in VALID_LOG_FORMATS:
            raise ValueError(
                f"LOG_FORMAT must be one of: {', '.join(sorted(VALID_LOG_FORMATS))}"
            )
        return v.lower()


@lru_cache()
def get_settings() -> Settings:
    """
    Get cached process settings.

    Returns:
        Settings object loaded once per process
    """
    return Settings()


def _format_validation_error(error: ValidationError) -> str:
    """Render the first pydantic error as a one-line cause."""
    first = error.errors()[0]
    location = ".".join(str(part) for part in first.get("loc", ()))
    return f"{location}: {first.get('msg', 'invalid value')}"


def _deep_merge(base: dict, overrides: Mapping[str, Any]) -> dict:
    """Merge nested override mappings into base (overrides win)."""
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Load and validate a run configuration.

    The file is a YAML mapping of sections (dataset, diffusion, model,
    train, ablation, paths) plus the root seed. Every field has a default,
    so a missing or empty file yields the default configuration. Unknown
    keys are rejected.

    Args:
        path: Config file path (optional)
        overrides: Nested overrides applied after the file (command-line flags)

    Returns:
        Validated RunConfig

    Raises:
        ArtifactError: If the file cannot be read or parsed
        ConfigValidationError: If a value or key is invalid
    """
    raw: dict = {}
    if path is not None:
        config_path = Path(path)
        try:
            text = config_path.read_text(encoding="utf-8")
        except OSError as e:
            raise ArtifactError(config_path, f"cannot read config ({e.strerror})") from e
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ArtifactError(config_path, f"invalid YAML ({type(e).__name__})") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigValidationError(
                f"config file must contain a mapping of sections: {config_path}"
            )
        raw = loaded

    if overrides:
        raw = _deep_merge(raw, overrides)

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigValidationError(
            f"invalid configuration: {_format_validation_error(e)}"
        ) from e

    logger.debug("run_config_loaded", path=str(path) if path else None)
    return config
