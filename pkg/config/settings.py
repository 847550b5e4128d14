from pydantic_settings import BaseSettings
from typing import Literal


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Output locations
    output_dir: str = "./outputs"
    log_dir: str = "./logs"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    # Thread count for per-time and per-block Monte-Carlo work
    workers: int = 1

    # Estimation grid (EDM spacing)
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    grid_size: int = 128

    # Monte-Carlo samples per grid time
    mc_samples: int = 1024
    quadrature_points: int = 96

    # KL evaluation
    kl_repeats: int = 100
    kl_paths: int = 10000
    kde_bandwidth: float = 0.01
    kde_mc: int = 1000

    class Config:
        env_file = ".env"
        case_sensitive = False
        extra = "ignore"


def validate_settings(settings_obj: Settings) -> list:
    """Return a list of problems with the configured defaults."""
    problems = []

    if not 0 < settings_obj.sigma_min < settings_obj.sigma_max:
        problems.append("SIGMA_MIN must be positive and below SIGMA_MAX")
    if settings_obj.rho <= 0:
        problems.append("RHO must be positive")
    if settings_obj.grid_size < 2:
        problems.append("GRID_SIZE must be at least 2")
    if settings_obj.workers < 1:
        problems.append("WORKERS must be at least 1")
    if settings_obj.mc_samples < 1:
        problems.append("MC_SAMPLES must be at least 1")
    if settings_obj.quadrature_points < 1:
        problems.append("QUADRATURE_POINTS must be at least 1")
    if settings_obj.kl_repeats < 1:
        problems.append("KL_REPEATS must be at least 1")
    if settings_obj.kl_paths < 1:
        problems.append("KL_PATHS must be at least 1")
    if settings_obj.kde_bandwidth <= 0:
        problems.append("KDE_BANDWIDTH must be positive")
    if settings_obj.kde_mc < 1:
        problems.append("KDE_MC must be at least 1")

    return problems


settings = Settings()
