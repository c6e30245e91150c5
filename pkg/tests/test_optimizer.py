import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxcompat.gof import BrightnessData, chi2_brightness
from maxcompat.optimizer import (
    OptimizationError,
    OptimizerOptions,
    fd_gradient,
    fd_jacobian,
    minimize,
    multi_start,
)
from maxcompat.projection import ScatteringLaw
from maxcompat.shape import ShapeParams, coefficient_keys
from maxcompat.simulate import NoiseSpec, simulate_data, truth_shape


def rosenbrock(p):
    return (1 - p[0]) ** 2 + 100 * (p[1] - p[0] ** 2) ** 2


def test_quadratic_1d():
    r = minimize(lambda p: (p[0] - 3) ** 2, [0.0])
    assert r.converged
    assert abs(r.P_star[0] - 3) < 1e-8


def test_rosenbrock():
    r = minimize(rosenbrock, [-1.2, 1.0], OptimizerOptions(max_iterations=500))
    assert r.converged
    assert np.max(np.abs(r.P_star - 1)) < 1e-6


def test_value_matches_objective_at_result():
    r = minimize(rosenbrock, [-1.2, 1.0])
    assert r.value == rosenbrock(r.P_star)


def test_nan_region_fails_cleanly():
    def f(p):
        return float("nan") if p[0] > 0.5 else (p[0] - 2) ** 2
    r = minimize(f, [0.0])
    assert not r.converged
    assert r.value <= 4.0
    assert r.P_star[0] <= 0.5


def test_non_finite_start_is_failure():
    r = minimize(lambda p: float("inf"), [0.0])
    assert not r.converged


def test_monotone_history():
    r = minimize(rosenbrock, [-1.2, 1.0])
    vals = [h for h in r.history]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_deterministic():
    a = minimize(rosenbrock, [-1.2, 1.0])
    b = minimize(rosenbrock, [-1.2, 1.0])
    np.testing.assert_array_equal(a.P_star, b.P_star)
    assert a.iterations == b.iterations and a.value == b.value


def test_fd_gradient_examples():
    np.testing.assert_allclose(fd_gradient(lambda p: p @ p, [1.0, 2.0]), [2, 4], rtol=1e-10)
    for h in (1e-2, 1e-4):
        np.testing.assert_allclose(fd_gradient(lambda p: 3 * p[0] - 2 * p[1], [0.3, 7.0], h), [3, -2],
                                   rtol=1e-10)
    with pytest.raises(FloatingPointError, match="coordinate 1"):
        fd_gradient(lambda p: p[0] + (math.sqrt(p[1]) if p[1] >= 0 else float("nan")), [1.0, 0.0])


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
@settings(max_examples=50, deadline=None)
def test_fd_exact_on_quadratics(a, p):
    A = np.diag([1.0, 2.0, 0.5]) + 0.1
    b = np.array(a)
    f = lambda x: 0.5 * x @ A @ x + b @ x + 1.0
    g = fd_gradient(f, p, 1e-4)
    exact = A @ np.array(p) + b
    assert np.all(np.abs(g - exact) <= 1e-10 * np.maximum(1.0, np.abs(exact)))


def test_fd_jacobian_linear():
    M = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
    np.testing.assert_allclose(fd_jacobian(lambda p: M @ p, [0.2, 0.4]), M, rtol=1e-10)


def test_fd_gradient_on_chi2_brightness():
    law = ScatteringLaw("lommel-seeliger")
    B, _ = simulate_data(truth_shape(), law, 2, NoiseSpec(), m=6, n_images=1, n_angles=4)
    keys = [(0, 0), (2, 0), (2, 2)]

    def f(x):
        return chi2_brightness(B, ShapeParams(dict(zip(keys, x)), truth_shape().spin), law, 2)

    x = np.array([0.05, -0.1, 0.1])
    h = 1e-5
    central = fd_gradient(f, x, h)
    f0 = f(x)
    one_sided = np.array([(f(x + h * e) - f0) / h for e in np.eye(3)])
    assert np.all(np.abs(central - one_sided) <= 10 * h * np.maximum(1.0, np.abs(central)))


def test_multi_start_double_well():
    f = lambda p: p[0] ** 4 - p[0] ** 2
    r = multi_start(f, [[-1.0], [1.0]])
    assert r.value == pytest.approx(-0.25, abs=1e-12)
    assert abs(abs(r.P_star[0]) - 1 / math.sqrt(2)) < 1e-6


def test_multi_start_single_and_duplicate():
    a = minimize(rosenbrock, [-1.2, 1.0])
    b = multi_start(rosenbrock, [[-1.2, 1.0]])
    c = multi_start(rosenbrock, [[-1.2, 1.0], [-1.2, 1.0]])
    for r in (b, c):
        np.testing.assert_array_equal(r.P_star, a.P_star)
        assert r.value == a.value


def test_multi_start_all_failed():
    with pytest.raises(OptimizationError):
        multi_start(lambda p: float("nan"), [[0.0], [1.0]])


def test_multi_start_jitter_is_seeded():
    f = lambda p: p[0] ** 4 - p[0] ** 2 + 0.1 * p[0]
    opts = OptimizerOptions(seed=11)
    a = multi_start(f, [[0.0]], opts, n_jitter=3)
    b = multi_start(f, [[0.0]], opts, n_jitter=3)
    np.testing.assert_array_equal(a.P_star, b.P_star)


def test_scaled_parameters():
    f = lambda p: (p[0] - 1e3) ** 2 / 1e6 + (p[1] - 1e-3) ** 2 * 1e6
    r = minimize(f, [0.0, 0.0], OptimizerOptions(scales=(1e3, 1e-3)))
    assert r.converged
    np.testing.assert_allclose(r.P_star, [1e3, 1e-3], rtol=1e-6)


def test_supplied_hessian():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    f = lambda p: 0.5 * p @ A @ p - p[0]
    r = minimize(f, [5.0, 5.0], grad=lambda p: A @ p - [1, 0], hess=lambda p: A)
    np.testing.assert_allclose(r.P_star, np.linalg.solve(A, [1, 0]), atol=1e-10)
    assert r.iterations <= 3


def test_options_validation():
    with pytest.raises(ValueError):
        OptimizerOptions(h=0)
    with pytest.raises(ValueError):
        OptimizerOptions(max_iterations=0)
    o = OptimizerOptions.from_dict({"gtol": 1e-6, "scales": [1, 2]})
    assert o.gtol == 1e-6 and o.scales == (1, 2)


def test_ftol_stops_on_stalled_decrease():
    # quartic bowl: Newton steps shrink the value geometrically, so progress stalls long before gtol
    f = lambda p: float(np.sum(p ** 4)) + 1.0
    strict = minimize(f, [1.0, -2.0], OptimizerOptions(gtol=1e-14, max_iterations=500))
    loose = minimize(f, [1.0, -2.0], OptimizerOptions(gtol=1e-14, ftol=1e-6, max_iterations=500))
    assert loose.reason == "ftol" and loose.converged
    assert loose.iterations < strict.iterations
    assert loose.value - 1.0 < 1e-4


def test_ftol_must_be_non_negative():
    with pytest.raises(ValueError):
        OptimizerOptions(ftol=-1e-9)
