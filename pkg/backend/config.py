"""
Runtime configuration for the market engine
Reads optional overrides from a .env file / environment, with built-in defaults
"""

import os
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, TypeVar

from dotenv import load_dotenv

from backend.errors import ConfigurationError

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_EPSILON = 1e-10
DEFAULT_MAX_ITERATIONS = 100000
DEFAULT_EXPORT_DIR = "data/exports"


def _get_env(name: str, default: T, cast: Callable[[str], T]) -> T:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return cast(raw.strip())
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Environment variable {name}={raw!r} is invalid: {e}") from e


@dataclass(frozen=True)
class Settings:
    """Engine-wide defaults; CLI flags take precedence over these"""
    epsilon: float = DEFAULT_EPSILON
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    schedule: str = "synchronous"
    seed: int = 0
    n_seeds: int = 20
    export_dir: Path = Path(DEFAULT_EXPORT_DIR)
    log_level: str = "INFO"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ConfigurationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.n_seeds < 1:
            raise ConfigurationError(f"n_seeds must be >= 1, got {self.n_seeds}")


def load_settings(env_file: Optional[str] = None) -> Settings:
    """
    Build settings from the environment

    Args:
        env_file: Optional explicit .env path (defaults to dotenv's search)

    Returns:
        Settings instance
    """
    if env_file:
        load_dotenv(env_file)
    else:
        load_dotenv()
    return Settings(
        epsilon=_get_env("MARKET_EPSILON", DEFAULT_EPSILON, float),
        max_iterations=_get_env("MARKET_MAX_ITER", DEFAULT_MAX_ITERATIONS, int),
        schedule=_get_env("MARKET_SCHEDULE", "synchronous", str),
        seed=_get_env("MARKET_SEED", 0, int),
        n_seeds=_get_env("MARKET_N_SEEDS", 20, int),
        export_dir=_get_env("MARKET_EXPORT_DIR", Path(DEFAULT_EXPORT_DIR), Path),
        log_level=_get_env("MARKET_LOG_LEVEL", "INFO", str).upper(),
    )


def configure_logging(level: str = "INFO") -> None:
    """Configure root logging once for script entry points"""
    numeric = getattr(logging, level.upper(), None)
    if not isinstance(numeric, int):
        raise ConfigurationError(f"Unknown log level {level!r}")
    logging.basicConfig(
        level=numeric,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
