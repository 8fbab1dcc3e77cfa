"""Budget-constrained spatial task assignment with arrival prediction."""

from .core import (
    Assignment,
    CandidatePair,
    ConflictError,
    Location,
    SimConfig,
    Task,
    UncertainScalar,
    Worker,
)

__all__ = ["Assignment", "CandidatePair", "ConflictError", "Location", "SimConfig", "Task",
           "UncertainScalar", "Worker"]
__version__ = "0.1.0"
