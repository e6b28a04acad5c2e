# =============================================================================
# NSLB - CONFIGURATION MANAGEMENT
# =============================================================================

"""
Configuration management using Pydantic Settings.
Handles environment variables and process-level settings.
"""

from pydantic_settings import BaseSettings
from typing import Optional
import os


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    # =============================================================================
    # PARALLELISM CONFIGURATION
    # =============================================================================
    threads: Optional[int] = None

    # =============================================================================
    # OUTPUT CONFIGURATION
    # =============================================================================
    output_dir: str = "results"

    # =============================================================================
    # LOGGING CONFIGURATION
    # =============================================================================
    log_level: str = "INFO"
    log_file: str = "logs/nslb.log"
    log_color: bool = True

    # =============================================================================
    # DEBUG CONFIGURATION
    # =============================================================================
    particle_snapshots: bool = False
    snapshot_dir: str = "logs/particles"

    # =============================================================================
    # APPLICATION SETTINGS
    # =============================================================================
    app_name: str = "Non-Stationary Latent Bandits"
    app_version: str = "1.0.0"

    class Config:
        env_file = ".env"
        env_prefix = "NSLB_"
        case_sensitive = False
        extra = "ignore"

    def worker_count(self, num_tasks: int) -> int:
        """Number of parallel workers for a batch of independent tasks."""
        available = os.cpu_count() or 1
        cap = self.threads if self.threads and self.threads > 0 else available
        return max(1, min(cap, num_tasks))


# Global settings instance
settings = Settings()
