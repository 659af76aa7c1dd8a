from typing import Optional, Tuple
import math

import numpy as np
from scipy.interpolate import BSpline as SciSpline

from errors import OutOfDomain

DEGREE = 3
DOMAIN_TOLERANCE = 1e-9


class UniformBSpline:
    """
    Clamped-free uniform cubic B-spline over d-dimensional control points.

    Knots sit at (j - 3) * knot_span so the valid domain is [0, T] with
    T = (N - 3) * knot_span.
    """

    degree = DEGREE

    def __init__(self, control_points, knot_span: float):
        points = np.asarray(control_points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if len(points) < DEGREE + 1:
            raise ValueError(f"need at least {DEGREE + 1} control points, got {len(points)}")
        if not knot_span > 0:
            raise ValueError(f"knot span must be positive, got {knot_span}")
        self.control_points = points
        self.knot_span = float(knot_span)
        self.knots = (np.arange(len(points) + DEGREE + 1) - DEGREE) * self.knot_span
        self._spline = SciSpline(self.knots, points, DEGREE, extrapolate=True)
        self._derivatives = {0: self._spline}

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    @property
    def duration(self) -> float:
        return (len(self.control_points) - DEGREE) * self.knot_span

    @property
    def num_spans(self) -> int:
        return len(self.control_points) - DEGREE

    def _check(self, t) -> np.ndarray:
        times = np.asarray(t, dtype=float)
        if np.any(times < -DOMAIN_TOLERANCE) or np.any(times > self.duration + DOMAIN_TOLERANCE):
            raise OutOfDomain(f"t={t} outside [0, {self.duration:.6f}]")
        return np.clip(times, 0.0, self.duration)

    def evaluate(self, t, order: int = 0) -> np.ndarray:
        """Value, first or second derivative at t (scalar or array)"""
        if order not in (0, 1, 2, 3):
            raise ValueError(f"unsupported derivative order {order}")
        times = self._check(t)
        if order not in self._derivatives:
            self._derivatives[order] = self._spline.derivative(order)
        return self._derivatives[order](times)

    def __call__(self, t, order: int = 0) -> np.ndarray:
        return self.evaluate(t, order)

    def derivative_control_points(self, order: int = 1) -> np.ndarray:
        """Q_i = (P_{i+1} - P_i) / dt, applied `order` times"""
        points = self.control_points
        for _ in range(order):
            points = np.diff(points, axis=0) / self.knot_span
        return points

    def sample_times(self, per_span: int = 20) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.num_spans * per_span + 1)

    def basis_matrix(self, times) -> np.ndarray:
        """(S, N) weights with evaluate(times) == basis_matrix(times) @ control_points"""
        times = self._check(times)
        return SciSpline.design_matrix(times, self.knots, DEGREE).toarray()

    def with_knot_span(self, knot_span: float) -> 'UniformBSpline':
        return UniformBSpline(self.control_points, knot_span)

    def local_control_points(self, t: float) -> np.ndarray:
        """The degree + 1 control points supporting the span containing t"""
        t = float(self._check(t))
        span = min(int(math.floor(t / self.knot_span)), self.num_spans - 1)
        return self.control_points[span:span + DEGREE + 1]

    def max_norms(self, per_span: int = 20) -> Tuple[float, float]:
        """Largest sampled first and second derivative magnitudes"""
        times = self.sample_times(per_span)
        velocity = np.linalg.norm(np.atleast_2d(self.evaluate(times, 1)).reshape(len(times), -1), axis=1)
        acceleration = np.linalg.norm(np.atleast_2d(self.evaluate(times, 2)).reshape(len(times), -1), axis=1)
        return float(velocity.max()), float(acceleration.max())


def start_control_points(p0, v0, a0, knot_span: float) -> np.ndarray:
    """First three control points reproducing position, velocity and acceleration at t = 0"""
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    dt2 = knot_span * knot_span
    p1 = p0 - a0 * dt2 / 6.0
    return np.stack([p1 - v0 * knot_span + a0 * dt2 / 2.0, p1, p1 + v0 * knot_span + a0 * dt2 / 2.0])


def constant_spline(value, duration: float, spans: int = 1) -> UniformBSpline:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return UniformBSpline(np.tile(value, (spans + DEGREE, 1)), duration / spans)


def linear_control_points(start, end, spans: int) -> np.ndarray:
    """Control points whose spline moves at constant rate from start (t=0) to end (t=T)"""
    start = np.atleast_1d(np.asarray(start, dtype=float))
    end = np.atleast_1d(np.asarray(end, dtype=float))
    fractions = (np.arange(spans + DEGREE) - 1.0) / spans
    return start + np.outer(fractions, end - start)


def span_count(duration: float, target_span: float, minimum: Optional[int] = None) -> int:
    spans = int(math.ceil(duration / target_span - 1e-9)) if duration > 0 else 1
    return max(minimum or 1, spans)
