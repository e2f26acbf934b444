from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="PNP_",
        env_ignore_empty=False,
        extra="ignore",
    )

    DEBUG: bool = False

    PROJECT_NAME: str = "lobatto-pnp"
    ENVIRONMENT: Literal["local", "staging", "production"] = "local"

    # Root directory for run outputs (PNP_OUTPUT_ROOT)
    OUTPUT_ROOT: str = "runs"

    # Sweeps run member configurations in this many processes
    SWEEP_MAX_WORKERS: int = 1

    # Logging settings
    LOG_SAMPLE_RATE: float = 0.1
    LOG_SLOW_THRESHOLD_MS: int = 1000  # Slow step threshold in ms


settings = Settings()
