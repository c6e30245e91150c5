"""Maximum compatibility estimate (MCE) and weight (MCW) for n complementary data modes.

Each data mode contributes a chi-square function chi2_i(P). The ideal point is
the vector of single-mode minima chi2_i0; the MCE minimizes the squared
log-distance sum_i log(chi2_i(P) / chi2_i0)^2 to it, and the MCW is the weight
vector whose weighted-sum minimizer lies closest to the ideal point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .gof import CHI2_FLOOR, ModeEvaluator, floored
from .optimizer import OptimizerOptions, OptResult, fd_jacobian, minimize, multi_start

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------

@dataclass
class ModeSet:
    modes: List[ModeEvaluator]

    def __post_init__(self):
        self.modes = list(self.modes)
        if len(self.modes) < 2:
            raise ValueError("a mode set needs at least two modes")

    @property
    def n(self) -> int:
        return len(self.modes)

    @property
    def names(self) -> List[str]:
        return [m.name for m in self.modes]

    def chi2(self, P) -> np.ndarray:
        return np.array([m(P) for m in self.modes])

    def scaled(self, index: int, c: float) -> "ModeSet":
        modes = list(self.modes)
        modes[index] = modes[index].scaled(c)
        return ModeSet(modes)


@dataclass
class IdealPoint:
    chi2_0: np.ndarray
    minimizers: List[np.ndarray]
    results: List[OptResult] = field(default_factory=list, repr=False)
    #: pairs (i, j) whose minimizers are indistinguishable in chi-square space
    degenerate_pairs: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def log0(self) -> np.ndarray:
        return np.log(floored(self.chi2_0))

    def with_floor(self, index: int, value: float) -> "IdealPoint":
        chi2_0 = self.chi2_0.copy()
        chi2_0[index] = max(chi2_0[index], value)
        return IdealPoint(chi2_0, self.minimizers, self.results, self.degenerate_pairs)


@dataclass
class SCurvePoint:
    lam: np.ndarray
    chi2: np.ndarray
    log_coords: np.ndarray
    P: np.ndarray
    value: float = math.nan
    converged: bool = True

    def distance(self) -> float:
        """Euclidean distance to the ideal point in log coordinates."""
        return float(np.linalg.norm(self.log_coords))


@dataclass
class SCurve:
    points: List[SCurvePoint]
    failures: List[Tuple[np.ndarray, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def chi2(self) -> np.ndarray:
        return np.array([p.chi2 for p in self.points])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def log_coords(self) -> np.ndarray:
        return np.array([p.log_coords for p in self.points])


@dataclass(frozen=True)
class FeasibilityRegion:
    """Upper bounds eps_i on acceptable chi2_i; None means unbounded."""

    bounds: Tuple[Optional[float], ...]

    def __post_init__(self):
        if any(b is not None and not b > 0 for b in self.bounds):
            raise ValueError("feasibility bounds must be positive")

    def contains(self, chi2) -> bool:
        return all(b is None or c <= b for c, b in zip(chi2, self.bounds))

    @classmethod
    def from_modes(cls, modeset: ModeSet) -> "FeasibilityRegion":
        return cls(tuple(m.epsilon for m in modeset.modes))


@dataclass
class MCEResult:
    P: np.ndarray
    objective: float
    chi2: np.ndarray
    result: OptResult = field(repr=False, default=None)


@dataclass
class FeasibilityResult:
    feasible: bool
    point: Optional[SCurvePoint]
    index: Optional[int]
    message: str


@dataclass
class ContinuityReport:
    steps: np.ndarray
    median_step: float
    flagged: List[Tuple[int, int]]
    near_lambda0: List[Tuple[int, int]]
    factor: float

    @property
    def ok(self) -> bool:
        return not self.flagged

    def to_dict(self) -> dict:
        return {
            "median_step": self.median_step,
            "factor": self.factor,
            "flagged_intervals": [list(map(int, f)) for f in self.flagged],
            "flagged_near_lambda0": [list(map(int, f)) for f in self.near_lambda0],
        }


# --------------------------------------------------------------------------
# objective assembly
# --------------------------------------------------------------------------

def chi_tot(modeset: ModeSet, lam, P) -> float:
    """chi2_1 + sum_i lam_{i-1} chi2_i."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.size != modeset.n - 1:
        raise ValueError(f"expected {modeset.n - 1} weights, got {lam.size}")
    chi2 = modeset.chi2(P)
    return float(chi2[0] + lam @ chi2[1:])


class _Derivatives:
    """Per-mode chi2, gradient and Gauss-Newton Hessian from residual Jacobians."""

    def __init__(self, modeset: ModeSet, h: float = 1e-6):
        self.modeset = modeset
        self.h = h
        self._key = None
        self._val = None

    @property
    def available(self) -> bool:
        return all(m.residuals is not None for m in self.modeset.modes)

    def __call__(self, P):
        P = np.asarray(P, dtype=float)
        key = P.tobytes()
        if key != self._key:
            out = []
            for m in self.modeset.modes:
                r = np.asarray(m.residuals(P), dtype=float)
                J = m.jacobian(P) if m.jacobian is not None else fd_jacobian(m.residuals, P, self.h)
                out.append((float(r @ r), 2.0 * J.T @ r, 2.0 * J.T @ J))
            self._key, self._val = key, out
        return self._val


def _objective(modeset: ModeSet, kind: str, ideal: Optional[IdealPoint] = None, lam=None):
    """Objective with optional analytic-structure gradient/Hessian callables."""
    deriv = _Derivatives(modeset)
    if kind == "tot":
        w = np.concatenate([[1.0], np.atleast_1d(np.asarray(lam, dtype=float))])
        fun = lambda P: float(w @ modeset.chi2(P))

        def combine(P):
            d = deriv(P)
            return (sum(wi * g for wi, (_, g, _) in zip(w, d)),
                    sum(wi * H for wi, (_, _, H) in zip(w, d)))
    elif kind == "log":
        log0 = ideal.log0

        def fun(P):
            s = np.log(floored(modeset.chi2(P))) - log0
            return float(s @ s)

        def combine(P):
            g_tot, H_tot = 0.0, 0.0
            for (c, g, H), l0 in zip(deriv(P), log0):
                c = max(c, CHI2_FLOOR)
                s = math.log(c) - l0
                ds = g / c
                g_tot = g_tot + 2.0 * s * ds
                H_tot = H_tot + 2.0 * (np.outer(ds, ds) + s * (H / c - np.outer(ds, ds)))
            return g_tot, H_tot
    elif kind == "ratio":
        c0 = floored(ideal.chi2_0)

        def fun(P):
            q = modeset.chi2(P) / c0 - 1.0
            return float(q @ q)

        def combine(P):
            g_tot, H_tot = 0.0, 0.0
            for (c, g, H), ci in zip(deriv(P), c0):
                q = c / ci - 1.0
                dq = g / ci
                g_tot = g_tot + 2.0 * q * dq
                H_tot = H_tot + 2.0 * (np.outer(dq, dq) + q * H / ci)
            return g_tot, H_tot
    else:
        raise ValueError(kind)
    if not deriv.available:
        return fun, None, None
    return fun, (lambda P: combine(P)[0]), (lambda P: combine(P)[1])


def _log_coords(chi2, ideal: IdealPoint) -> np.ndarray:
    return np.log(floored(chi2)) - ideal.log0


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def single_mode_minima(modeset: ModeSet, options: OptimizerOptions, starts: Sequence,
                       degeneracy_rtol: float = 1e-6) -> IdealPoint:
    """Per-mode best local minimum over the starts (the ideal point)."""
    if not starts:
        raise ValueError("at least one start point is required")
    chi2_0, minimizers, results = [], [], []
    for i, mode in enumerate(modeset.modes):
        fun, g, H = _objective(ModeSet([mode, mode]), "tot", lam=[0.0])
        res = multi_start(fun, starts, options, g, H)
        if not res.converged:
            logger.warning("mode %r: minimization did not converge (%s)", mode.name, res.reason)
        chi2_0.append(max(res.value, CHI2_FLOOR))
        minimizers.append(res.P_star)
        results.append(res)
    chi2_0 = np.array(chi2_0)
    degenerate = []
    for i in range(modeset.n):
        for j in range(i + 1, modeset.n):
            ci = modeset.chi2(minimizers[i])
            cj = modeset.chi2(minimizers[j])
            tol = degeneracy_rtol * np.maximum(chi2_0, 1.0)
            if np.all(ci - chi2_0 <= tol) and np.all(cj - chi2_0 <= tol):
                degenerate.append((i, j))
                logger.warning("modes %r and %r share a minimizer; MCE is that minimizer",
                               modeset.modes[i].name, modeset.modes[j].name)
    return IdealPoint(chi2_0, minimizers, results, degenerate)


def lambda_grid(lo: float = 1e-3, hi: float = 1e3, num: int = 25, n_modes: int = 2) -> List[np.ndarray]:
    """Log-spaced weight grid; for n > 2 modes the per-axis product grid."""
    axis = np.geomspace(lo, hi, num)
    if n_modes == 2:
        return [np.array([v]) for v in axis]
    mesh = np.meshgrid(*([axis] * (n_modes - 1)), indexing="ij")
    return [np.array(v) for v in np.stack([m.ravel() for m in mesh], axis=1)]


def weight_unit(ideal: IdealPoint) -> np.ndarray:
    """chi2_10 / chi2_i0: the weights making each mode's minimum count equally."""
    c0 = floored(ideal.chi2_0)
    return c0[0] / c0[1:]


def _minimize_tot(modeset, lam, start, options):
    fun, g, H = _objective(modeset, "tot", lam=lam)
    return minimize(fun, start, options, g, H)


def trace_scurve(modeset: ModeSet, lambda_grid: Sequence, ideal: IdealPoint,
                 options: OptimizerOptions, relative: bool = True, sweeps: int = 2) -> SCurve:
    """Minimize the weighted sum over a grid of weights.

    With ``relative`` the grid values are in units of :func:`weight_unit`, so
    rescaling a mode leaves the traced points unchanged. The grid is swept
    forward from the first mode's minimizer and (with ``sweeps=2``) backward
    from the last mode's, keeping the lower weighted sum at every point.
    """
    grid = [np.atleast_1d(np.asarray(l, dtype=float)) for l in lambda_grid]
    if not grid:
        raise ValueError("empty weight grid")
    unit = weight_unit(ideal) if relative else np.ones(modeset.n - 1)
    lams = [g * unit for g in grid]
    best: List[Optional[OptResult]] = [None] * len(lams)
    errors: List[Optional[str]] = [None] * len(lams)
    orders = [range(len(lams))]
    if sweeps > 1:
        orders.append(range(len(lams) - 1, -1, -1))
    first = [ideal.minimizers[0], ideal.minimizers[int(np.argmax(grid[-1])) + 1]]
    for sweep, order in enumerate(orders):
        start = first[sweep]
        for k in order:
            res = _minimize_tot(modeset, lams[k], start, options)
            if not math.isfinite(res.value):
                errors[k] = res.reason
                continue
            if best[k] is None or res.value < best[k].value:
                best[k] = res
            start = best[k].P_star
    points, failures = [], []
    for k, res in enumerate(best):
        if res is None:
            failures.append((lams[k], errors[k] or "failed"))
            logger.warning("weight %s skipped: %s", lams[k], errors[k])
            continue
        chi2 = modeset.chi2(res.P_star)
        points.append(SCurvePoint(lams[k], chi2, _log_coords(chi2, ideal), res.P_star,
                                  res.value, res.converged))
    return SCurve(points, failures)


def mcw(scurve: SCurve, ideal: IdealPoint) -> Tuple[np.ndarray, SCurvePoint, int]:
    """Traced point closest to the ideal point in log coordinates."""
    if len(scurve) == 0:
        raise ValueError("cannot select a weight on an empty curve")
    d = [float(np.sum(_log_coords(p.chi2, ideal) ** 2)) for p in scurve]
    k = int(np.argmin(d))
    return scurve[k].lam, scurve[k], k


def refine_mcw(modeset: ModeSet, ideal: IdealPoint, point: SCurvePoint, options: OptimizerOptions,
               step: float = 0.5, rounds: int = 4) -> SCurvePoint:
    """Coordinate search in log-weight space around a traced point (n > 2 modes)."""
    best = point
    dist = np.sum(_log_coords(best.chi2, ideal) ** 2)
    for _ in range(rounds):
        improved = False
        for axis in range(modeset.n - 1):
            for sgn in (1.0, -1.0):
                lam = best.lam.copy()
                lam[axis] *= 10.0 ** (sgn * step)
                res = _minimize_tot(modeset, lam, best.P, options)
                if not math.isfinite(res.value):
                    continue
                chi2 = modeset.chi2(res.P_star)
                dd = np.sum(_log_coords(chi2, ideal) ** 2)
                if dd < dist:
                    best = SCurvePoint(lam, chi2, _log_coords(chi2, ideal), res.P_star, res.value,
                                       res.converged)
                    dist, improved = dd, True
        if not improved:
            step *= 0.5
    return best


def _mce(kind, modeset, ideal, options, starts):
    starts = list(starts) if starts is not None else []
    starts += list(ideal.minimizers)
    fun, g, H = _objective(modeset, kind, ideal)
    res = multi_start(fun, starts, options, g, H)
    return MCEResult(res.P_star, res.value, modeset.chi2(res.P_star), res)


def mce_direct(modeset: ModeSet, ideal: IdealPoint, options: OptimizerOptions,
               starts: Sequence = None) -> MCEResult:
    """argmin_P sum_i log(chi2_i(P) / chi2_i0)^2, best over starts and mode minimizers."""
    return _mce("log", modeset, ideal, options, starts)


def mce_first_order(modeset: ModeSet, ideal: IdealPoint, options: OptimizerOptions,
                    starts: Sequence = None) -> MCEResult:
    """argmin_P sum_i (chi2_i(P) / chi2_i0 - 1)^2, the linearized variant."""
    return _mce("ratio", modeset, ideal, options, starts)


def mce_objective(chi2, ideal: IdealPoint) -> float:
    s = _log_coords(np.asarray(chi2, dtype=float), ideal)
    return float(s @ s)


def log_distance(chi2_a, chi2_b) -> float:
    return float(np.linalg.norm(np.log(floored(chi2_a)) - np.log(floored(chi2_b))))


def apply_feasibility(scurve: SCurve, mcw_point: SCurvePoint, region: FeasibilityRegion,
                      ideal: Optional[IdealPoint] = None) -> FeasibilityResult:
    """Keep the MCW point if feasible, else the feasible traced point nearest along the curve."""
    if region.contains(mcw_point.chi2):
        k = next((i for i, p in enumerate(scurve) if p is mcw_point), None)
        return FeasibilityResult(True, mcw_point, k, "weight-selected point is feasible")
    incompatible = "the data modes do not allow a compatible joint model"
    if ideal is not None and not region.contains(ideal.chi2_0):
        return FeasibilityResult(False, None, None,
                                 f"{incompatible}: a bound lies below a single-mode minimum")
    feasible = [i for i, p in enumerate(scurve) if region.contains(p.chi2)]
    if not feasible:
        return FeasibilityResult(False, None, None,
                                 f"{incompatible}: no traced point satisfies all bounds")
    logs = np.array([np.log(floored(p.chi2)) for p in scurve])
    seg = np.linalg.norm(np.diff(logs, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    k0 = next((i for i, p in enumerate(scurve) if p is mcw_point), None)
    if k0 is None:
        k0 = int(np.argmin(np.linalg.norm(logs - np.log(floored(mcw_point.chi2)), axis=1)))
    k = min(feasible, key=lambda i: (abs(arc[i] - arc[k0]), i))
    return FeasibilityResult(True, scurve[k], k, "clipped to the feasible part of the curve")


def continuity_diagnostic(scurve: SCurve, lambda0_index: Optional[int] = None, factor: float = 10.0,
                          scales=None, window: int = 3, atol: float = 1e-6) -> ContinuityReport:
    """Flag jumps of the weighted-sum minimizer between neighbouring weights.

    A step is flagged when it exceeds ``factor`` times the median of the steps
    within ``window`` grid intervals on either side (saturated curve ends would
    drag a global median to zero) and is larger than ``atol`` in scaled units.
    """
    if len(scurve) < 3:
        raise ValueError("continuity diagnostic needs at least three traced points")
    P = np.array([p.P for p in scurve])
    if scales is not None:
        P = P / np.asarray(scales, dtype=float)
    steps = np.linalg.norm(np.diff(P, axis=0), axis=1)
    med = float(np.median(steps))
    flagged = []
    for k, s in enumerate(steps):
        lo, hi = max(0, k - window), min(len(steps), k + window + 1)
        others = np.concatenate([steps[lo:k], steps[k + 1:hi]])
        if s > atol and s > factor * float(np.median(others)):
            flagged.append((k, k + 1))
    near = []
    if lambda0_index is not None:
        near = [f for f in flagged if abs(f[0] - lambda0_index) <= window
                or abs(f[1] - lambda0_index) <= window]
    for a, b in flagged:
        logger.warning("minimizer jumps between weights %s and %s", scurve[a].lam, scurve[b].lam)
    return ContinuityReport(steps, med, flagged, near, factor)


def regularizer_mode_guard(scurve: SCurve, mode_index: int, ideal: IdealPoint,
                           floor_fraction: float = 1e-3) -> Tuple[SCurve, IdealPoint, float]:
    """Drop points where a regularizer mode dives below a practical floor.

    The floor is ``floor_fraction`` times the median regularizer value along the
    curve; it also replaces that mode's ideal-point coordinate when higher.
    """
    g = scurve.chi2[:, mode_index]
    floor = floor_fraction * float(np.median(g))
    keep = [p for p, v in zip(scurve, g) if v >= floor]
    if len(keep) == len(scurve) and ideal.chi2_0[mode_index] >= floor:
        return scurve, ideal, floor
    new_ideal = ideal.with_floor(mode_index, floor)
    pts = [SCurvePoint(p.lam, p.chi2, _log_coords(p.chi2, new_ideal), p.P, p.value, p.converged)
           for p in keep]
    return SCurve(pts, scurve.failures), new_ideal, floor


def max_curvature_index(scurve: SCurve) -> Optional[int]:
    """L-curve style comparison point: maximum curvature of the traced 2-mode curve."""
    if len(scurve) < 3 or scurve[0].lam.size != 1:
        return None
    logs = np.array([np.log(floored(p.chi2)) for p in scurve])
    t = np.log(scurve.lambdas[:, 0])
    x, y = logs[:, 0], logs[:, 1]
    dx, dy = np.gradient(x, t), np.gradient(y, t)
    ddx, ddy = np.gradient(dx, t), np.gradient(dy, t)
    denom = (dx * dx + dy * dy) ** 1.5
    kappa = np.where(denom > 0, np.abs(dx * ddy - dy * ddx) / np.where(denom > 0, denom, 1.0), 0.0)
    return int(np.argmax(kappa))


def pareto_violations(scurve: SCurve, rtol: float = 1e-6) -> List[int]:
    """Indices k where the 2-mode curve breaks x non-decreasing / y non-increasing."""
    c = scurve.chi2
    bad = []
    for k in range(len(c) - 1):
        if c[k + 1, 0] < c[k, 0] * (1 - rtol) or c[k + 1, 1] > c[k, 1] * (1 + rtol):
            bad.append(k)
    return bad


def estimate_epsilon(chi2_0: float, n_points: int, k: float = 3.0) -> float:
    """chi2_0 * (1 + k sqrt(2 / N)): k chi-square standard deviations above the minimum."""
    return float(chi2_0 * (1.0 + k * math.sqrt(2.0 / n_points)))


def nondegenerate(ideal: IdealPoint) -> bool:
    return not ideal.degenerate_pairs


# --------------------------------------------------------------------------
# quadratic test family
# --------------------------------------------------------------------------

def quadratic_mode(name: str, center: float, weight: float = 1.0, offset: float = 1.0) -> ModeEvaluator:
    """chi2(p) = weight (p - center)^2 + offset on a scalar parameter."""
    sw, so = math.sqrt(weight), math.sqrt(offset)

    def res(P):
        return np.array([sw * (P[0] - center), so])

    def jac(P):
        return np.array([[sw], [0.0]])

    return ModeEvaluator.from_residuals(name, res, 1, jac)


def quadratic_modeset(weights=(1.0, 1.0), centers=(0.0, 1.0)) -> ModeSet:
    return ModeSet([quadratic_mode(f"quad{i + 1}", c, w) for i, (w, c) in enumerate(zip(weights, centers))])


def quadratic_scurve_closed_form(lam) -> Tuple[np.ndarray, np.ndarray]:
    """x(lam), y(lam) for p^2 + 1 and (p - 1)^2 + 1."""
    lam = np.asarray(lam, dtype=float)
    return (lam / (1 + lam)) ** 2 + 1, (1 / (1 + lam)) ** 2 + 1
