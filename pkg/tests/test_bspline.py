import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import OutOfDomain
from planners.bspline import (
    UniformBSpline, constant_spline, linear_control_points, span_count, start_control_points,
)


def random_spline(seed, count=9, dim=3, knot_span=0.4):
    rng = np.random.default_rng(seed)
    return UniformBSpline(rng.uniform(-2.0, 2.0, size=(count, dim)), knot_span)


def test_domain_and_duration():
    spline = random_spline(0, count=9, knot_span=0.5)
    assert spline.duration == pytest.approx(3.0)
    assert spline.num_spans == 6
    spline.evaluate(0.0)
    spline.evaluate(3.0)
    with pytest.raises(OutOfDomain):
        spline.evaluate(-0.01)
    with pytest.raises(OutOfDomain):
        spline.evaluate(np.array([1.0, 3.5]))


def test_needs_four_control_points():
    with pytest.raises(ValueError):
        UniformBSpline(np.zeros((3, 2)), 0.1)
    with pytest.raises(ValueError):
        UniformBSpline(np.zeros((5, 2)), 0.0)


@pytest.mark.parametrize('seed', range(3))
def test_derivatives_match_finite_differences(seed):
    spline = random_spline(seed)
    h = 1e-5
    times = np.linspace(h, spline.duration - h, 50)
    for order in (1, 2):
        numeric = (spline.evaluate(times + h, order - 1) - spline.evaluate(times - h, order - 1)) / (2.0 * h)
        analytic = spline.evaluate(times, order)
        scale = np.maximum(np.abs(analytic), 1.0)
        assert np.all(np.abs(numeric - analytic) <= 1e-6 * scale * 10 ** (order - 1))


def test_basis_matrix_reproduces_evaluation():
    spline = random_spline(4)
    times = spline.sample_times(7)
    assert np.allclose(spline.basis_matrix(times) @ spline.control_points, spline.evaluate(times))
    assert np.allclose(spline.basis_matrix(times).sum(axis=1), 1.0)


@settings(max_examples=50)
@given(st.floats(0.0, 2.4))
def test_convex_hull_of_local_control_points(t):
    spline = random_spline(5, count=9, knot_span=0.4)
    local = spline.local_control_points(t)
    value = spline.evaluate(t)
    assert len(local) == 4
    assert np.all(value >= local.min(axis=0) - 1e-9)
    assert np.all(value <= local.max(axis=0) + 1e-9)


def test_derivative_control_points_bound_sampled_velocity():
    spline = random_spline(6)
    q = spline.derivative_control_points(1)
    assert q.shape == (8, 3)
    velocity = spline.evaluate(spline.sample_times(20), 1)
    assert np.all(np.abs(velocity) <= np.abs(q).max(axis=0) + 1e-9)
    v_max, _ = spline.max_norms()
    assert v_max <= np.linalg.norm(q, axis=1).max() + 1e-9


def test_stretching_knot_span_slows_the_curve():
    spline = random_spline(7)
    slow = spline.with_knot_span(2.0 * spline.knot_span)
    assert slow.duration == pytest.approx(2.0 * spline.duration)
    assert np.allclose(slow.evaluate(1.0), spline.evaluate(0.5))
    assert np.allclose(slow.evaluate(1.0, 1), 0.5 * spline.evaluate(0.5, 1))
    assert np.allclose(slow.evaluate(1.0, 2), 0.25 * spline.evaluate(0.5, 2))


def test_start_control_points_reproduce_state():
    p0, v0, a0 = np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 0.0]), np.array([0.2, 0.0, -0.4])
    points = np.vstack([start_control_points(p0, v0, a0, 0.3), np.tile([5.0, 5.0, 5.0], (4, 1))])
    spline = UniformBSpline(points, 0.3)
    assert spline.evaluate(0.0) == pytest.approx(p0)
    assert spline.evaluate(0.0, 1) == pytest.approx(v0)
    assert spline.evaluate(0.0, 2) == pytest.approx(a0)


def test_linear_control_points_hit_both_ends():
    spline = UniformBSpline(linear_control_points([0.0, 1.0], [4.0, -1.0], 5), 0.2)
    assert spline.evaluate(0.0) == pytest.approx([0.0, 1.0])
    assert spline.evaluate(spline.duration) == pytest.approx([4.0, -1.0])
    assert np.allclose(spline.evaluate(spline.sample_times(), 1), [[4.0, -2.0]])


def test_constant_spline_is_flat():
    spline = constant_spline(0.7, 2.0, spans=4)
    assert spline.duration == pytest.approx(2.0)
    assert np.allclose(spline.evaluate(spline.sample_times()), 0.7)
    assert np.allclose(spline.evaluate(spline.sample_times(), 1), 0.0)


def test_span_count():
    assert span_count(1.0, 0.25) == 4
    assert span_count(1.01, 0.25) == 5
    assert span_count(0.1, 0.25, minimum=4) == 4
    assert span_count(0.0, 0.25) == 1
