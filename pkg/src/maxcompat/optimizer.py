"""Trust-region minimization with finite-difference derivatives and multi-start."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerOptions:
    max_iterations: int = 200
    gtol: float = 1e-8
    xtol: float = 1e-12
    #: stop after two consecutive accepted steps that each lower f by less than ftol * |f|
    ftol: float = 0.0
    h: float = 1e-5
    initial_radius: float = 1.0
    seed: int = 0
    #: characteristic parameter scales; the optimizer works in x / scales
    scales: Optional[tuple] = None

    def __post_init__(self):
        if not (self.gtol > 0 and self.xtol > 0 and self.h > 0 and self.initial_radius > 0):
            raise ValueError("tolerances, step and radius must be positive")
        if self.ftol < 0:
            raise ValueError("ftol must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def with_(self, **kw) -> "OptimizerOptions":
        d = asdict(self)
        d.update(kw)
        return OptimizerOptions(**d)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "OptimizerOptions":
        d = dict(d or {})
        if d.get("scales") is not None:
            d["scales"] = tuple(d["scales"])
        return cls(**d)


@dataclass
class OptResult:
    P_star: np.ndarray
    value: float
    converged: bool
    iterations: int
    reason: str
    n_evals: int = 0
    history: list = field(default_factory=list, repr=False)


def fd_gradient(objective: Callable, P, h=1e-5) -> np.ndarray:
    """Central-difference gradient; raises FloatingPointError on non-finite values."""
    P = np.asarray(P, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), P.shape)
    g = np.empty_like(P)
    for k in range(P.size):
        e = np.zeros_like(P)
        e[k] = h[k]
        fp, fm = objective(P + e), objective(P - e)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective along coordinate {k}")
        g[k] = (fp - fm) / (2.0 * h[k])
    return g


def fd_jacobian(residuals: Callable, P, h=1e-5) -> np.ndarray:
    """Central-difference Jacobian of a residual vector function."""
    P = np.asarray(P, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), P.shape)
    cols = []
    for k in range(P.size):
        e = np.zeros_like(P)
        e[k] = h[k]
        d = (np.asarray(residuals(P + e)) - np.asarray(residuals(P - e))) / (2.0 * h[k])
        if not np.all(np.isfinite(d)):
            raise FloatingPointError(f"non-finite residuals along coordinate {k}")
        cols.append(d)
    return np.column_stack(cols)


def _trust_step(g: np.ndarray, B: np.ndarray, radius: float) -> np.ndarray:
    """Nearly exact solution of min g.p + p.B.p/2 subject to |p| <= radius."""
    w, V = np.linalg.eigh(0.5 * (B + B.T))
    gt = V.T @ g

    def step(lam):
        return -gt / (w + lam)

    if w[0] > 0:
        p = step(0.0)
        if np.linalg.norm(p) <= radius:
            return V @ p
    lo = max(0.0, -w[0]) + 1e-14 * max(1.0, abs(w[-1]))
    # hard case: gradient (almost) orthogonal to the lowest eigenvector
    if np.linalg.norm(step(lo)) < radius:
        p = step(lo)
        p[0] = 0.0 if w[0] >= 0 else p[0]
        rest = radius ** 2 - p @ p
        if w[0] < 0 and rest > 0:
            p[0] += math.sqrt(rest)
        return V @ p
    hi = lo + np.linalg.norm(g) / radius + abs(w[-1])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(step(mid)) > radius:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return V @ step(hi)


def _safe(objective, x) -> float:
    try:
        v = float(objective(x))
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        logger.debug("objective raised %s", exc)
        return math.nan
    return v


def minimize(objective: Callable, start, options: OptimizerOptions = OptimizerOptions(),
             grad: Callable = None, hess: Callable = None) -> OptResult:
    """Local trust-region minimization.

    Without ``grad`` the gradient comes from central differences; without
    ``hess`` a BFGS approximation is maintained. Accepted iterates never
    increase the objective.
    """
    x0 = np.array(start, dtype=float).ravel()
    scales = np.ones_like(x0) if options.scales is None else np.asarray(options.scales, dtype=float)
    if scales.shape != x0.shape:
        raise ValueError("scales must match the parameter dimension")
    n_evals = 0

    def f(z):
        nonlocal n_evals
        n_evals += 1
        return _safe(objective, z * scales)

    def g_of(z):
        if grad is None:
            return fd_gradient(f, z, options.h)
        return np.asarray(grad(z * scales), dtype=float) * scales

    def H_of(z):
        return np.asarray(hess(z * scales), dtype=float) * np.outer(scales, scales)

    z = x0 / scales
    fz = f(z)
    if not math.isfinite(fz):
        return OptResult(x0, fz, False, 0, "non-finite objective at start", n_evals)
    try:
        g = g_of(z)
    except (FloatingPointError, ArithmeticError, ValueError, RuntimeError) as exc:
        return OptResult(x0, fz, False, 0, f"non-finite gradient: {exc}", n_evals)
    B = H_of(z) if hess is not None else np.eye(z.size)
    radius = options.initial_radius
    nonfinite = False
    reason = "max_iterations"
    converged = False
    it = 0
    stalls = 0
    history = [fz]
    while it < options.max_iterations:
        if np.max(np.abs(g)) <= options.gtol:
            reason, converged = "gradient", True
            break
        it += 1
        p = _trust_step(g, B, radius)
        pred = -(g @ p + 0.5 * p @ B @ p)
        f_new = f(z + p)
        if not math.isfinite(f_new):
            nonfinite = True
            radius = 0.25 * np.linalg.norm(p)
            if radius <= options.xtol * (1.0 + np.linalg.norm(z)):
                reason = "step"
                break
            continue
        actual = fz - f_new
        rho = actual / pred if pred > 0 else -1.0
        pn = np.linalg.norm(p)
        if rho < 0.25:
            radius = 0.25 * pn
        elif rho > 0.75 and pn > 0.99 * radius:
            radius = 2.0 * radius
        if actual > 0 and rho > 1e-4:
            z_new = z + p
            try:
                g_new = g_of(z_new)
            except (FloatingPointError, ArithmeticError, ValueError, RuntimeError) as exc:
                z, fz = z_new, f_new
                reason, nonfinite = f"non-finite gradient: {exc}", True
                break
            if hess is not None:
                B = H_of(z_new)
            else:
                y = g_new - g
                sy = p @ y
                if sy > 1e-12 * pn * np.linalg.norm(y):
                    Bs = B @ p
                    B = B + np.outer(y, y) / sy - np.outer(Bs, Bs) / (p @ Bs)
            small = pn <= options.xtol * (1.0 + np.linalg.norm(z))
            stalls = stalls + 1 if actual <= options.ftol * abs(fz) else 0
            z, fz, g = z_new, f_new, g_new
            history.append(fz)
            if small:
                reason, converged = "step", True
                break
            if stalls >= 2:
                reason, converged = "ftol", True
                break
        elif pn <= options.xtol * (1.0 + np.linalg.norm(z)):
            reason, converged = "step", True
            break
    if nonfinite and not (converged and reason == "gradient"):
        converged = False
        if not reason.startswith("non-finite"):
            reason = "non-finite objective encountered"
    return OptResult(z * scales, fz, converged, it, reason, n_evals, history)


def multi_start(objective: Callable, starts: Sequence, options: OptimizerOptions = OptimizerOptions(),
                grad: Callable = None, hess: Callable = None, n_jitter: int = 0,
                jitter: float = 0.1) -> OptResult:
    """Best local minimum over the given starts (plus seeded jittered copies)."""
    starts = [np.array(s, dtype=float).ravel() for s in starts]
    if not starts:
        raise ValueError("multi_start needs at least one start")
    if n_jitter:
        rng = np.random.default_rng(options.seed)
        sc = 1.0 if options.scales is None else np.asarray(options.scales)
        base = list(starts)
        for s in base:
            for _ in range(n_jitter):
                starts.append(s + jitter * sc * rng.standard_normal(s.shape))
    results = []
    seen = []
    for s in starts:
        if any(np.array_equal(s, t) for t in seen):
            continue
        seen.append(s)
        results.append(minimize(objective, s, options, grad, hess))
    finite = [r for r in results if math.isfinite(r.value)]
    if not finite:
        raise OptimizationError("all starts failed: " + "; ".join(r.reason for r in results))
    ok = [r for r in finite if r.converged]
    best = min(ok or finite, key=lambda r: r.value)
    if not ok:
        best.reason = "no start converged: " + "; ".join(sorted({r.reason for r in results}))
    return best
