from typing import Any, Dict, List, Optional


class FaepError(Exception):
    """Base class for every error raised by the exploration planner"""


class ConfigError(FaepError):
    def __init__(self, field: str, message: str):
        """Configuration or scenario file problem tied to one field"""
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class PoseInvalid(FaepError):
    """Sensor pose outside the bounds or inside an obstacle"""


class OutOfBounds(FaepError):
    """Query point outside the map bounds"""


class NoViewpoint(FaepError):
    """Every viewpoint sample of a frontier cluster was rejected"""


class EmptyFrontierSet(FaepError):
    """Cost matrix requested with no active frontier clusters"""


class OutOfDomain(FaepError):
    """Spline evaluated outside [0, T]"""


class EmptyCandidates(FaepError):
    """Middle yaw requested with no candidate viewpoints"""


class PlanningFailed(FaepError):
    """Local planning could not produce a trajectory"""


class NoPath(PlanningFailed):
    """Goal unreachable through free space"""


class OptimizationFailed(PlanningFailed):
    def __init__(self, message: str, seed_path: Optional[List[Any]] = None):
        """Optimization diverged; the seed path is kept as the degenerate fallback"""
        super().__init__(message)
        self.seed_path = seed_path
        self.fallback = seed_path is not None


class InfeasibleStart(PlanningFailed):
    """Start state already violates the kinematic limits"""


class GenerationFailed(FaepError):
    """Scenario generator could not satisfy its constraints"""


class TimeCapExceeded(FaepError):
    def __init__(self, message: str, report: Optional[Dict[str, Any]] = None):
        """Mission hit its simulated time cap; carries the partial report"""
        super().__init__(message)
        self.report = report


class Stuck(FaepError):
    def __init__(self, message: str, report: Optional[Dict[str, Any]] = None):
        """No plan found for any active cluster after all retries"""
        super().__init__(message)
        self.report = report
