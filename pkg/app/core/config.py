"""
Application configuration settings
Handles environment variables for process-level settings
Experiment configuration lives in app.schemas.run and is loaded from JSON documents
Reference: https://docs.pydantic.dev/latest/concepts/pydantic_settings/
"""
from pydantic import ConfigDict, Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables
    Uses pydantic BaseSettings for validation and type conversion

    Values can be set in a .env file or exported in the shell
    """
    PROJECT_NAME: str = "pfedgrp-sim"
    VERSION: str = "0.1.0"

    # Upper bound on concurrently executing client / server jobs within a round
    # Results never depend on this value, only wall-clock time does
    PFEDGRP_MAX_WORKERS: int = Field(
        default=4,
        ge=1,
        description="Size of the bounded worker pool used inside a federated round",
    )

    LOG_LEVEL: str = Field(
        default="INFO",
        description="Root logger level (DEBUG, INFO, WARNING, ERROR)",
    )

    # Pydantic v2 configuration
    # Reference: https://docs.pydantic.dev/latest/api/config/
    model_config = ConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


# Global settings instance
# Import this in other modules to access configuration
settings = Settings()
