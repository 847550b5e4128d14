from .builders import (
    Schedule,
    ScheduleBuilder,
    edm_schedule,
    entropic_schedule,
    gaussian_optimal_schedule,
    uniform_schedule,
)

__all__ = [
    "Schedule",
    "ScheduleBuilder",
    "edm_schedule",
    "entropic_schedule",
    "gaussian_optimal_schedule",
    "uniform_schedule",
]
