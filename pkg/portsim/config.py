"""
portsim Configuration
Environment-driven settings plus config-file loading for experiment grids.
"""
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

import orjson
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict


class ConfigurationError(ValueError):
    """Raised when a configuration is invalid or inconsistent."""


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables (prefix PORTSIM_)."""

    model_config = SettingsConfigDict(
        env_prefix="PORTSIM_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # Application
    APP_NAME: str = "portsim"
    ENVIRONMENT: str = "development"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = Field("console", pattern="^(console|json)$")

    # Reproducibility
    SEED: Optional[int] = Field(None, description="Overrides the run seed (smoke tests)")

    # Execution
    WORKERS: int = Field(1, ge=1, description="Concurrent grid runs")
    METRICS_FILE: Optional[str] = None


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


def load_config_file(path: str | Path) -> Dict[str, Any]:
    """Read a JSON key-value config document."""
    path = Path(path)
    try:
        data = orjson.loads(path.read_bytes())
    except FileNotFoundError as e:
        raise ConfigurationError(f"config file not found: {path}") from e
    except orjson.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must contain a JSON object")
    return data


ModelT = TypeVar("ModelT", bound=BaseModel)


def parse_model(model_cls: Type[ModelT], data: Mapping[str, Any], source: str = "config") -> ModelT:
    """Validate a mapping into a config model, raising ConfigurationError on failure."""
    try:
        return model_cls.model_validate(dict(data))
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigurationError(f"invalid {source}: {problems}") from e
