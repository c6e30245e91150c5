import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from maxcompat.core import (
    FeasibilityRegion,
    ModeSet,
    SCurve,
    apply_feasibility,
    chi_tot,
    continuity_diagnostic,
    estimate_epsilon,
    lambda_grid,
    log_distance,
    max_curvature_index,
    mce_direct,
    mce_first_order,
    mce_objective,
    mcw,
    nondegenerate,
    pareto_violations,
    quadratic_mode,
    quadratic_modeset,
    quadratic_scurve_closed_form,
    refine_mcw,
    regularizer_mode_guard,
    single_mode_minima,
    trace_scurve,
)
from maxcompat.gof import ModeEvaluator
from maxcompat.optimizer import OptimizerOptions

OPT = OptimizerOptions()


def solve(modeset, grid, relative=True, starts=([0.5],)):
    ideal = single_mode_minima(modeset, OPT, list(starts))
    return ideal, trace_scurve(modeset, grid, ideal, OPT, relative=relative)


def mce_grid_oracle(chi2_funcs, lo=-1.0, hi=2.0, step=1e-4, first_order=False):
    """Dense scan of the compatibility objective for scalar-parameter modes."""
    p = np.arange(lo, hi + step, step)
    vals = np.array([f(p) for f in chi2_funcs])
    mins = vals.min(axis=1, keepdims=True)
    r = vals / mins
    obj = ((r - 1) ** 2 if first_order else np.log(r) ** 2).sum(axis=0)
    return p[np.argmin(obj)]


# ---------------------------------------------------------------- chi_tot

def test_chi_tot_examples():
    ms = ModeSet([ModeEvaluator("a", lambda P: 3.0, 1), ModeEvaluator("b", lambda P: 4.0, 1)])
    assert chi_tot(ms, [1.0], [0.0]) == 7.0
    assert chi_tot(ms, [0.0], [0.0]) == 3.0
    ones = ModeSet([ModeEvaluator(n, lambda P: 1.0, 1) for n in "abc"])
    assert chi_tot(ones, [2.0, 0.5], [0.0]) == 3.5
    with pytest.raises(ValueError):
        chi_tot(ones, [1.0], [0.0])


def test_modeset_needs_two_modes():
    with pytest.raises(ValueError):
        ModeSet([quadratic_mode("a", 0.0)])


# ---------------------------------------------------------------- ideal point

def test_quadratic_single_mode_minima():
    ideal = single_mode_minima(quadratic_modeset(), OPT, [[0.5]])
    np.testing.assert_allclose(ideal.chi2_0, [1, 1], atol=1e-12)
    assert ideal.minimizers[0][0] == pytest.approx(0.0, abs=1e-8)
    assert ideal.minimizers[1][0] == pytest.approx(1.0, abs=1e-8)
    assert nondegenerate(ideal)


def test_degenerate_pair_detected():
    ideal = single_mode_minima(quadratic_modeset(centers=(0.3, 0.3)), OPT, [[0.0]])
    assert ideal.degenerate_pairs == [(0, 1)]
    assert not nondegenerate(ideal)


# ---------------------------------------------------------------- S-curve

def test_quadratic_scurve_closed_form():
    grid = lambda_grid(1e-3, 1e3, 25)
    ideal, sc = solve(quadratic_modeset(), grid)
    lam = sc.lambdas[:, 0]
    x, y = quadratic_scurve_closed_form(lam)
    np.testing.assert_allclose(sc.chi2[:, 0], x, atol=1e-6)
    np.testing.assert_allclose(sc.chi2[:, 1], y, atol=1e-6)
    np.testing.assert_allclose([p.P[0] for p in sc], lam / (1 + lam), atol=1e-6)


def test_quadratic_at_lambda_one():
    _, sc = solve(quadratic_modeset(), [[0.25], [1.0], [4.0]])
    np.testing.assert_allclose(sc[1].chi2, [1.25, 1.25], atol=1e-9)
    lam0, point, k = mcw(sc, single_mode_minima(quadratic_modeset(), OPT, [[0.5]]))
    assert k == 1 and lam0[0] == pytest.approx(1.0)
    # distances from the closed form: symmetric ends, minimum at the centre
    d = [p.distance() for p in sc]
    assert d[0] == pytest.approx(d[2], rel=1e-6) and d[1] < d[0]


def test_endpoints_reproduce_single_mode_minima():
    ideal, sc = solve(quadratic_modeset(), lambda_grid(1e-4, 1e4, 17))
    assert sc[0].chi2[0] == pytest.approx(ideal.chi2_0[0], rel=1e-4)
    assert sc[-1].chi2[1] == pytest.approx(ideal.chi2_0[1], rel=1e-4)


@given(st.floats(0.2, 5.0), st.floats(-2.0, 2.0), st.floats(0.1, 3.0))
@settings(max_examples=25, deadline=None)
def test_pareto_monotone_on_random_quadratics(w, c, off):
    ms = ModeSet([quadratic_mode("a", 0.0), quadratic_mode("b", c, w, off)])
    if abs(c) < 1e-3:
        return
    _, sc = solve(ms, lambda_grid(1e-3, 1e3, 13), starts=([c / 2],))
    assert pareto_violations(sc, 1e-6) == []
    # every traced chi2 lies above the ideal point
    assert np.all(sc.log_coords > -1e-9)


def test_relative_grid_is_scale_invariant():
    grid = lambda_grid(1e-2, 1e2, 9)
    ms = quadratic_modeset((1.0, 4.0))
    ideal, sc = solve(ms, grid)
    ideal2, sc2 = solve(ms.scaled(1, 100.0), grid)
    np.testing.assert_allclose([p.P for p in sc], [p.P for p in sc2], atol=1e-8)
    assert mcw(sc, ideal)[2] == mcw(sc2, ideal2)[2]


# ---------------------------------------------------------------- MCE

def test_mce_symmetric_quadratic():
    ms = quadratic_modeset()
    ideal = single_mode_minima(ms, OPT, [[0.5]])
    for fn in (mce_direct, mce_first_order):
        res = fn(ms, ideal, OPT)
        assert res.P[0] == pytest.approx(0.5, abs=1e-4)


def test_mce_asymmetric_matches_grid_oracle():
    ms = quadratic_modeset((1.0, 4.0))
    ideal = single_mode_minima(ms, OPT, [[0.5]])
    oracle = mce_grid_oracle([lambda p: p ** 2 + 1, lambda p: 4 * (p - 1) ** 2 + 1])
    assert mce_direct(ms, ideal, OPT).P[0] == pytest.approx(oracle, abs=1e-4)
    oracle_fo = mce_grid_oracle([lambda p: p ** 2 + 1, lambda p: 4 * (p - 1) ** 2 + 1], first_order=True)
    assert mce_first_order(ms, ideal, OPT).P[0] == pytest.approx(oracle_fo, abs=1e-4)


def test_mce_degenerate_modes():
    ms = quadratic_modeset(centers=(0.3, 0.3))
    ideal = single_mode_minima(ms, OPT, [[0.0]])
    for fn in (mce_direct, mce_first_order):
        res = fn(ms, ideal, OPT)
        assert res.P[0] == pytest.approx(0.3, abs=1e-8)
        assert res.objective == pytest.approx(0.0, abs=1e-14)


def test_mce_scale_invariance():
    ms = quadratic_modeset((1.0, 4.0))
    base = mce_direct(ms, single_mode_minima(ms, OPT, [[0.5]]), OPT).P
    for i in (0, 1):
        s = ms.scaled(i, 100.0)
        P = mce_direct(s, single_mode_minima(s, OPT, [[0.5]]), OPT).P
        assert np.linalg.norm(P - base) < 1e-6


def test_mce_at_least_as_close_as_curve():
    ms = quadratic_modeset((1.0, 4.0))
    ideal, sc = solve(ms, lambda_grid(1e-2, 1e2, 21))
    res = mce_direct(ms, ideal, OPT)
    assert all(res.objective <= mce_objective(p.chi2, ideal) + 1e-12 for p in sc)


def test_mcw_consistent_with_mce():
    # 25 grid points per decade
    ms = quadratic_modeset((1.0, 4.0))
    ideal, sc = solve(ms, lambda_grid(1e-2, 1e2, 101))
    _, pt, _ = mcw(sc, ideal)
    res = mce_direct(ms, ideal, OPT)
    assert log_distance(pt.chi2, res.chi2) < 0.05


@given(st.floats(0.3, 3.0), st.floats(0.1, 0.6))
@settings(max_examples=25, deadline=None)
def test_first_order_agreement(w, d):
    ms = quadratic_modeset((1.0, w), (0.0, d))
    ideal = single_mode_minima(ms, OPT, [[d / 2]])
    a, b = mce_direct(ms, ideal, OPT), mce_first_order(ms, ideal, OPT)
    assume(np.all(a.chi2 / ideal.chi2_0 - 1 < 0.2))
    assert log_distance(a.chi2, b.chi2) < 0.02


def test_three_modes():
    ms = quadratic_modeset((1.0, 1.0, 1.0), (0.0, 1.0, 2.0))
    ideal = single_mode_minima(ms, OPT, [[1.0]])
    assert mce_direct(ms, ideal, OPT).P[0] == pytest.approx(1.0, abs=1e-6)
    sc = trace_scurve(ms, lambda_grid(0.1, 10, 5, n_modes=3), ideal, OPT)
    assert len(sc) == 25
    _, pt, _ = mcw(sc, ideal)
    refined = refine_mcw(ms, ideal, pt, OPT)
    assert mce_objective(refined.chi2, ideal) <= mce_objective(pt.chi2, ideal)
    assert refined.P[0] == pytest.approx(1.0, abs=1e-3)


# ---------------------------------------------------------------- feasibility

def test_feasibility_unbounded_keeps_mcw():
    ms = quadratic_modeset()
    ideal, sc = solve(ms, lambda_grid(1e-2, 1e2, 9))
    _, pt, k = mcw(sc, ideal)
    out = apply_feasibility(sc, pt, FeasibilityRegion((10.0, None)), ideal)
    assert out.feasible and out.point is pt and out.index == k


def test_feasibility_clipping_on_quadratic():
    ms = quadratic_modeset()
    ideal, sc = solve(ms, lambda_grid(1e-3, 1e3, 49))
    _, pt, k0 = mcw(sc, ideal)
    eps1 = 1.1
    out = apply_feasibility(sc, pt, FeasibilityRegion((eps1, None)), ideal)
    assert out.feasible
    assert out.point.chi2[0] <= eps1
    # the next grid point towards the weight-selected point is already infeasible
    assert out.index < k0 and sc[out.index + 1].chi2[0] > eps1
    lam_edge = math.sqrt(0.1) / (1 - math.sqrt(0.1))
    assert sc[out.index].lam[0] <= lam_edge < sc[out.index + 1].lam[0]


def test_infeasible_below_minima():
    ms = quadratic_modeset()
    ideal, sc = solve(ms, lambda_grid(1e-2, 1e2, 9))
    _, pt, _ = mcw(sc, ideal)
    out = apply_feasibility(sc, pt, FeasibilityRegion((0.5, 0.5)), ideal)
    assert not out.feasible and out.point is None
    assert "compatible" in out.message


def test_feasibility_region_validation():
    with pytest.raises(ValueError):
        FeasibilityRegion((0.0, None))


def test_estimate_epsilon():
    assert estimate_epsilon(10.0, 50) == pytest.approx(10 * (1 + 3 * math.sqrt(2 / 50)))


# ---------------------------------------------------------------- continuity

def test_continuity_smooth_quadratic():
    _, sc = solve(quadratic_modeset(), lambda_grid(1e-3, 1e3, 25))
    assert continuity_diagnostic(sc, 12).ok


def bimodal_modes():
    a = ModeEvaluator("a", lambda P: P[0] ** 2 + 1, 1)
    b = ModeEvaluator("b", lambda P: 1 + 0.5 * (P[0] - 1) ** 2 * (P[0] - 3) ** 2 + 0.3 * (3 - P[0]), 1)
    return ModeSet([a, b])


def bimodal_switch_oracle(lams):
    p = np.arange(-1.0, 4.0, 1e-4)
    c1 = p ** 2 + 1
    c2 = 1 + 0.5 * (p - 1) ** 2 * (p - 3) ** 2 + 0.3 * (3 - p)
    argmins = np.array([p[np.argmin(c1 + l * c2)] for l in lams])
    jumps = np.abs(np.diff(argmins))
    return int(np.argmax(jumps)), float(jumps.max())


def test_continuity_flags_basin_switch():
    ms = bimodal_modes()
    grid = lambda_grid(1e-2, 1e2, 41)
    ideal = single_mode_minima(ms, OPT, [[0.0], [3.0]])
    sc = trace_scurve(ms, grid, ideal, OPT, relative=False)
    k, size = bimodal_switch_oracle(sc.lambdas[:, 0])
    assert size > 0.5
    rep = continuity_diagnostic(sc)
    assert rep.flagged == [(k, k + 1)]
    assert not rep.ok
    assert "flagged_intervals" in rep.to_dict()


def test_continuity_needs_points():
    _, sc = solve(quadratic_modeset(), [[1.0]])
    with pytest.raises(ValueError):
        continuity_diagnostic(sc)


# ---------------------------------------------------------------- regularizer guard

def reg_modes():
    data = quadratic_mode("data", 1.0)
    g = ModeEvaluator.from_residuals("g", lambda P: np.array([P[0]]), 1, lambda P: np.array([[1.0]]),
                                     regularizer=True)
    return ModeSet([data, g])


def test_regularizer_guard_windows_tail():
    ms = reg_modes()
    ideal, sc = solve(ms, lambda_grid(1e-3, 1e3, 25), relative=False, starts=([0.5],))
    k_raw = mcw(sc, ideal)[2]
    assert k_raw == len(sc) - 1  # the raw selection is dragged to the g -> 0 tail
    windowed, ideal2, floor = regularizer_mode_guard(sc, 1, ideal)
    assert len(windowed) < len(sc)
    assert np.all(windowed.chi2[:, 1] >= floor)
    assert ideal2.chi2_0[1] == pytest.approx(floor)
    lam_raw = sc[k_raw].lam[0]
    lam_win = mcw(windowed, ideal2)[0][0]
    assert lam_win < lam_raw


def test_regularizer_guard_noop_when_bounded():
    ms = quadratic_modeset()
    ideal, sc = solve(ms, lambda_grid(1e-2, 1e2, 9))
    windowed, ideal2, _ = regularizer_mode_guard(sc, 1, ideal)
    assert windowed is sc and ideal2 is ideal


# ---------------------------------------------------------------- curvature baseline

def closed_form_curvature(lam):
    t = np.log(lam)
    x, y = (np.log(v) for v in quadratic_scurve_closed_form(lam))
    dx, dy = np.gradient(x, t), np.gradient(y, t)
    ddx, ddy = np.gradient(dx, t), np.gradient(dy, t)
    return np.abs(dx * ddy - dy * ddx) / (dx * dx + dy * dy) ** 1.5


def test_max_curvature_against_closed_form():
    grid = lambda_grid(1e-2, 1e2, 21)
    _, sc = solve(quadratic_modeset(), grid)
    k = max_curvature_index(sc)
    # dense closed-form curvature of the log-space curve; it peaks (~2) in the tails, ~1.06 at lam = 1
    dense = np.geomspace(1e-2, 1e2, 4001)
    kappa = closed_form_curvature(dense)
    at_k = np.interp(np.log(sc[k].lam[0]), np.log(dense), kappa)
    assert at_k >= 0.98 * kappa[5:-5].max()
    assert max_curvature_index(SCurve(sc.points[:2])) is None
