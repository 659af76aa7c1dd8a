from dataclasses import dataclass, field
from typing import Any, Dict, Optional
import logging

import numpy as np

from services.grid_world import Pose


@dataclass(eq=False)
class DroneState:
    """Kinematic state X_0: position, yaw, velocity and acceleration"""
    position: np.ndarray
    yaw: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.acceleration = np.asarray(self.acceleration, dtype=float)
        self.yaw = float(self.yaw)

    @classmethod
    def at_rest(cls, pose: Pose) -> 'DroneState':
        return cls(pose.p, pose.yaw)

    @property
    def pose(self) -> Pose:
        return Pose.of(self.position, self.yaw)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


class BasePlanner:
    def __init__(self):
        """Initialize base planner with a module logger"""
        self.logger = logging.getLogger(self.__class__.__module__)

    def handle_error(self, error: Exception, context: Optional[Dict[str, Any]] = None,
                     level: int = logging.WARNING) -> None:
        """Log an error with its context; the caller decides whether to re-raise"""
        context = context or {}
        error_msg = f"Error in {context.get('method', 'unknown method')}: {str(error)}"
        details = {k: v for k, v in context.items() if k != 'method'}
        if details:
            error_msg = f"{error_msg} {details}"
        self.logger.log(level, error_msg)

    def format_duration(self, seconds: float) -> str:
        """Format seconds for log lines"""
        return f"{seconds:.2f}s"

    def format_distance(self, meters: float) -> str:
        """Format meters for log lines"""
        return f"{meters:.2f}m"

    def format_latency(self, seconds: float) -> str:
        """Format a wall-clock duration as milliseconds"""
        return f"{seconds * 1000.0:.1f}ms"
